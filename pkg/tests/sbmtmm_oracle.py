"""Hand-transcribed symbolic Jacobian of the split-ballot CTUM template.

Independent oracle for the analytic Jacobian: every nonzero entry of the
42 x 24 matrix is written out explicitly as a function of the parameter
values, row by row in moment order (group 1's 21 vech rows, then group 2's).
Column order groups the loadings by method, then residual variances, trait
correlations, and method variances.
"""

import numpy as np

ORACLE_COLUMNS = (
    "l11", "l21", "l31", "l12", "l22", "l32", "l13", "l23", "l33",
    "psi1", "psi2", "psi3", "psi4", "psi5", "psi6", "psi7", "psi8", "psi9",
    "rho12", "rho13", "rho23", "phi4", "phi5", "phi6",
)

# one dict per moment row: column label -> entry as a function of the
# parameter dict p
ORACLE_ROWS = [
    # group 1: y11 y12 y21 y22 y31 y32, lower triangle column-major
    {"l11": lambda p: 2 * p["l11"], "psi1": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l12"], "l12": lambda p: p["l11"]},
    {"l11": lambda p: p["l21"] * p["rho12"],
     "l21": lambda p: p["l11"] * p["rho12"],
     "rho12": lambda p: p["l11"] * p["l21"], "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l22"] * p["rho12"],
     "l22": lambda p: p["l11"] * p["rho12"],
     "rho12": lambda p: p["l11"] * p["l22"]},
    {"l11": lambda p: p["l31"] * p["rho13"],
     "l31": lambda p: p["l11"] * p["rho13"],
     "rho13": lambda p: p["l11"] * p["l31"], "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l32"] * p["rho13"],
     "l32": lambda p: p["l11"] * p["rho13"],
     "rho13": lambda p: p["l11"] * p["l32"]},
    {"l12": lambda p: 2 * p["l12"], "psi2": lambda p: 1.0,
     "phi5": lambda p: 1.0},
    {"l21": lambda p: p["l12"] * p["rho12"],
     "l12": lambda p: p["l21"] * p["rho12"],
     "rho12": lambda p: p["l12"] * p["l21"]},
    {"l12": lambda p: p["l22"] * p["rho12"],
     "l22": lambda p: p["l12"] * p["rho12"],
     "rho12": lambda p: p["l12"] * p["l22"], "phi5": lambda p: 1.0},
    {"l31": lambda p: p["l12"] * p["rho13"],
     "l12": lambda p: p["l31"] * p["rho13"],
     "rho13": lambda p: p["l12"] * p["l31"]},
    {"l12": lambda p: p["l32"] * p["rho13"],
     "l32": lambda p: p["l12"] * p["rho13"],
     "rho13": lambda p: p["l12"] * p["l32"], "phi5": lambda p: 1.0},
    {"l21": lambda p: 2 * p["l21"], "psi3": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l21": lambda p: p["l22"], "l22": lambda p: p["l21"]},
    {"l21": lambda p: p["l31"] * p["rho23"],
     "l31": lambda p: p["l21"] * p["rho23"],
     "rho23": lambda p: p["l21"] * p["l31"], "phi4": lambda p: 1.0},
    {"l21": lambda p: p["l32"] * p["rho23"],
     "l32": lambda p: p["l21"] * p["rho23"],
     "rho23": lambda p: p["l21"] * p["l32"]},
    {"l22": lambda p: 2 * p["l22"], "psi4": lambda p: 1.0,
     "phi5": lambda p: 1.0},
    {"l31": lambda p: p["l22"] * p["rho23"],
     "l22": lambda p: p["l31"] * p["rho23"],
     "rho23": lambda p: p["l22"] * p["l31"]},
    {"l22": lambda p: p["l32"] * p["rho23"],
     "l32": lambda p: p["l22"] * p["rho23"],
     "rho23": lambda p: p["l22"] * p["l32"], "phi5": lambda p: 1.0},
    {"l31": lambda p: 2 * p["l31"], "psi5": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l31": lambda p: p["l32"], "l32": lambda p: p["l31"]},
    {"l32": lambda p: 2 * p["l32"], "psi6": lambda p: 1.0,
     "phi5": lambda p: 1.0},
    # group 2: y11 y13 y21 y23 y31 y33
    {"l11": lambda p: 2 * p["l11"], "psi1": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l13"], "l13": lambda p: p["l11"]},
    {"l11": lambda p: p["l21"] * p["rho12"],
     "l21": lambda p: p["l11"] * p["rho12"],
     "rho12": lambda p: p["l11"] * p["l21"], "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l23"] * p["rho12"],
     "l23": lambda p: p["l11"] * p["rho12"],
     "rho12": lambda p: p["l11"] * p["l23"]},
    {"l11": lambda p: p["l31"] * p["rho13"],
     "l31": lambda p: p["l11"] * p["rho13"],
     "rho13": lambda p: p["l11"] * p["l31"], "phi4": lambda p: 1.0},
    {"l11": lambda p: p["l33"] * p["rho13"],
     "l33": lambda p: p["l11"] * p["rho13"],
     "rho13": lambda p: p["l11"] * p["l33"]},
    {"l13": lambda p: 2 * p["l13"], "psi7": lambda p: 1.0,
     "phi6": lambda p: 1.0},
    {"l21": lambda p: p["l13"] * p["rho12"],
     "l13": lambda p: p["l21"] * p["rho12"],
     "rho12": lambda p: p["l13"] * p["l21"]},
    {"l13": lambda p: p["l23"] * p["rho12"],
     "l23": lambda p: p["l13"] * p["rho12"],
     "rho12": lambda p: p["l13"] * p["l23"], "phi6": lambda p: 1.0},
    {"l31": lambda p: p["l13"] * p["rho13"],
     "l13": lambda p: p["l31"] * p["rho13"],
     "rho13": lambda p: p["l13"] * p["l31"]},
    {"l13": lambda p: p["l33"] * p["rho13"],
     "l33": lambda p: p["l13"] * p["rho13"],
     "rho13": lambda p: p["l13"] * p["l33"], "phi6": lambda p: 1.0},
    {"l21": lambda p: 2 * p["l21"], "psi3": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l21": lambda p: p["l23"], "l23": lambda p: p["l21"]},
    {"l21": lambda p: p["l31"] * p["rho23"],
     "l31": lambda p: p["l21"] * p["rho23"],
     "rho23": lambda p: p["l21"] * p["l31"], "phi4": lambda p: 1.0},
    {"l21": lambda p: p["l33"] * p["rho23"],
     "l33": lambda p: p["l21"] * p["rho23"],
     "rho23": lambda p: p["l21"] * p["l33"]},
    {"l23": lambda p: 2 * p["l23"], "psi8": lambda p: 1.0,
     "phi6": lambda p: 1.0},
    {"l23": lambda p: p["l31"] * p["rho23"],
     "l31": lambda p: p["l23"] * p["rho23"],
     "rho23": lambda p: p["l23"] * p["l31"]},
    {"l23": lambda p: p["l33"] * p["rho23"],
     "l33": lambda p: p["l23"] * p["rho23"],
     "rho23": lambda p: p["l23"] * p["l33"], "phi6": lambda p: 1.0},
    {"l31": lambda p: 2 * p["l31"], "psi5": lambda p: 1.0,
     "phi4": lambda p: 1.0},
    {"l31": lambda p: p["l33"], "l33": lambda p: p["l31"]},
    {"l33": lambda p: 2 * p["l33"], "psi9": lambda p: 1.0,
     "phi6": lambda p: 1.0},
]


def evaluate_oracle(values: dict) -> np.ndarray:
    """Evaluate the symbolic Jacobian at a parameter dict, 42 x 24."""
    out = np.zeros((len(ORACLE_ROWS), len(ORACLE_COLUMNS)))
    col = {lab: j for j, lab in enumerate(ORACLE_COLUMNS)}
    for i, row in enumerate(ORACLE_ROWS):
        for lab, fn in row.items():
            out[i, col[lab]] = fn(values)
    return out

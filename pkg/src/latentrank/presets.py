"""Built-in model templates.

``sbmtmm`` is the reduced-group split-ballot multitrait-multimethod template:
three correlated traits, three mutually uncorrelated method factors with unit
loadings and free variances, two groups observing methods (1, 2) and (1, 3).
Trait variances are fixed at one; method-factor variances are left free
(matching the convention that treats them as parameters rather than
standardizing them).  Residual variances of the method-1 indicators are shared
across groups, since both groups observe the same items.

``shapiro`` is the classical three-indicator factor model in two
parameterizations: ``shapiro`` estimates residual variances directly (negative
estimates possible), ``shapiro_squared`` routes each residual through a unit
variance factor so the implied variance is the square of a real loading.  The
squared form loses Jacobian rank whenever one of those loadings is zero.
"""

from __future__ import annotations

import numpy as np

from .dsl import parse_model
from .model import ModelSpec, Theta

SBMTMM_LOADINGS = ("l11", "l12", "l21", "l22", "l31", "l32", "l13", "l23", "l33")
SBMTMM_METHOD1_LOADINGS = ("l11", "l21", "l31")
SBMTMM_PSIS = ("psi1", "psi2", "psi3", "psi4", "psi5",
               "psi6", "psi7", "psi8", "psi9")
SBMTMM_METHOD1_PSIS = ("psi1", "psi3", "psi5")
SBMTMM_RHOS = ("rho12", "rho13", "rho23")
SBMTMM_PHIS = ("phi4", "phi5", "phi6")


def sbmtmm_model_text(delta: float = 0.0) -> str:
    """Two-group split-ballot CTUM template; ``delta`` sets the trait
    correlation start values to (0.5 - delta, 0.5, 0.5 + delta)."""
    r12, r13, r23 = 0.5 - delta, 0.5, 0.5 + delta
    return f"""\
# Correlated traits, uncorrelated methods, split-ballot two-group design:
# group 1 observes methods 1 and 2, group 2 observes methods 1 and 3.
T1 ~~ 1*T1
T2 ~~ 1*T2
T3 ~~ 1*T3
T1 ~~ rho12*start({r12!r})*T2
T1 ~~ rho13*start({r13!r})*T3
T2 ~~ rho23*start({r23!r})*T3

group: 1
T1 =~ l11*y11 + l12*y12
T2 =~ l21*y21 + l22*y22
T3 =~ l31*y31 + l32*y32
M1 =~ 1*y11 + 1*y21 + 1*y31
M2 =~ 1*y12 + 1*y22 + 1*y32
M1 ~~ phi4*M1
M2 ~~ phi5*M2
y11 ~~ psi1*y11
y12 ~~ psi2*y12
y21 ~~ psi3*y21
y22 ~~ psi4*y22
y31 ~~ psi5*y31
y32 ~~ psi6*y32

group: 2
T1 =~ l11*y11 + l13*y13
T2 =~ l21*y21 + l23*y23
T3 =~ l31*y31 + l33*y33
M1 =~ 1*y11 + 1*y21 + 1*y31
M3 =~ 1*y13 + 1*y23 + 1*y33
M1 ~~ phi4*M1
M3 ~~ phi6*M3
y11 ~~ psi1*y11
y13 ~~ psi7*y13
y21 ~~ psi3*y21
y23 ~~ psi8*y23
y31 ~~ psi5*y31
y33 ~~ psi9*y33
"""


def sbmtmm_spec(delta: float = 0.0) -> ModelSpec:
    return parse_model(sbmtmm_model_text(delta), n_groups=2).require()


def sbmtmm_population_values(delta: float) -> dict[str, float]:
    """Generating parameter values: unit loadings and variances, trait
    correlations (0.5 - delta, 0.5, 0.5 + delta)."""
    values = {lab: 1.0 for lab in SBMTMM_LOADINGS}
    values.update({lab: 1.0 for lab in SBMTMM_PSIS})
    values.update({lab: 1.0 for lab in SBMTMM_PHIS})
    values.update(rho12=0.5 - delta, rho13=0.5, rho23=0.5 + delta)
    return values


def sbmtmm_population_theta(delta: float, spec: ModelSpec | None = None) -> Theta:
    spec = spec if spec is not None else sbmtmm_spec(delta)
    return spec.theta_from(sbmtmm_population_values(delta))


def sbmtmm_equal_theta(lam: float, rho: float, psi: float = 1.0,
                       phi: float = 1.0, spec: ModelSpec | None = None) -> Theta:
    """Point with all trait loadings equal and all trait correlations equal,
    where the split-ballot Jacobian loses one rank."""
    spec = spec if spec is not None else sbmtmm_spec()
    values = {lab: lam for lab in SBMTMM_LOADINGS}
    values.update({lab: psi for lab in SBMTMM_PSIS})
    values.update({lab: phi for lab in SBMTMM_PHIS})
    values.update({lab: rho for lab in SBMTMM_RHOS})
    return spec.theta_from(values)


def ctum_pooled_model_text(delta: float = 0.0) -> str:
    """Single-group nine-variable CTUM template (no planned missingness),
    written in the auto-variance style: residual variances and method factor
    variances are added automatically as free parameters."""
    r12, r13, r23 = 0.5 - delta, 0.5, 0.5 + delta
    return f"""\
T1 =~ y1 + y2 + y3
T2 =~ y4 + y5 + y6
T3 =~ y7 + y8 + y9

M1 =~ 1*y1 + 1*y4 + 1*y7
M2 =~ 1*y2 + 1*y5 + 1*y8
M3 =~ 1*y3 + 1*y6 + 1*y9

M1 ~~ 0*M2 + 0*M3 + 0*T1 + 0*T2 + 0*T3
M2 ~~ 0*M3 + 0*T1 + 0*T2 + 0*T3
M3 ~~ 0*T1 + 0*T2 + 0*T3

T1 ~~ start({r12!r})*T2 + start({r13!r})*T3 + 1*T1
T2 ~~ start({r23!r})*T3 + 1*T2
T3 ~~ 1*T3
"""


def shapiro_model_text() -> str:
    """Three-indicator factor model, direct residual-variance parameterization."""
    return """\
F =~ l1*y1 + l2*y2 + l3*y3
F ~~ 1*F
y1 ~~ psi1*y1
y2 ~~ psi2*y2
y3 ~~ psi3*y3
"""


def shapiro_spec() -> ModelSpec:
    return parse_model(shapiro_model_text()).require()


def shapiro_squared_model_text() -> str:
    """Three-indicator factor model with residual standard deviations as
    loadings on unit-variance factors: implied residual variances are squares
    of real parameters, so they can never be negative."""
    return """\
F =~ l1*y1 + l2*y2 + l3*y3
E1 =~ p1*y1
E2 =~ p2*y2
E3 =~ p3*y3
F ~~ 1*F
E1 ~~ 1*E1
E2 ~~ 1*E2
E3 ~~ 1*E3
y1 ~~ 0*y1
y2 ~~ 0*y2
y3 ~~ 0*y3
"""


def shapiro_squared_spec() -> ModelSpec:
    return parse_model(shapiro_squared_model_text()).require()


# Generating values for the three-indicator experiments.  The second loading
# is 0.4 (the three loadings are 1, 0.4, 0.7); residual standard deviations
# are (1, 0.3, 0), i.e. variances (1, 0.09, 0), putting the squared
# parameterization exactly at its rank-deficient point.
SHAPIRO_LAMBDAS = (1.0, 0.4, 0.7)
SHAPIRO_PSI_SDS = (1.0, 0.3, 0.0)
SHAPIRO_PSI_VARS = (1.0, 0.09, 0.0)


def shapiro_population_theta(spec: ModelSpec | None = None,
                             squared: bool = False) -> Theta:
    if squared:
        spec = spec if spec is not None else shapiro_squared_spec()
        values = dict(zip(("l1", "l2", "l3"), SHAPIRO_LAMBDAS))
        values.update(zip(("p1", "p2", "p3"), SHAPIRO_PSI_SDS))
    else:
        spec = spec if spec is not None else shapiro_spec()
        values = dict(zip(("l1", "l2", "l3"), SHAPIRO_LAMBDAS))
        values.update(zip(("psi1", "psi2", "psi3"), SHAPIRO_PSI_VARS))
    return spec.theta_from(values)


def shapiro_squared_theta(psi3: float, spec: ModelSpec | None = None) -> Theta:
    """Squared-parameterization point with the third residual loading at
    ``psi3``; the Jacobian drops rank exactly at psi3 = 0."""
    spec = spec if spec is not None else shapiro_squared_spec()
    values = dict(zip(("l1", "l2", "l3"), SHAPIRO_LAMBDAS))
    values.update(p1=SHAPIRO_PSI_SDS[0], p2=SHAPIRO_PSI_SDS[1], p3=float(psi3))
    return spec.theta_from(values)


_PRESET_TEXTS = {
    "sbmtmm": sbmtmm_model_text,
    "ctum-pooled": ctum_pooled_model_text,
    "shapiro": lambda delta=0.0: shapiro_model_text(),
    "shapiro-squared": lambda delta=0.0: shapiro_squared_model_text(),
}

_PRESET_GROUPS = {"sbmtmm": 2, "ctum-pooled": 1, "shapiro": 1,
                  "shapiro-squared": 1}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESET_TEXTS))


def is_preset(token: str) -> bool:
    return token.split(":", 1)[0] in _PRESET_TEXTS


def resolve_preset(token: str) -> tuple[str, int]:
    """Resolve ``name`` or ``name:delta`` into (model text, group count)."""
    name, _, arg = token.partition(":")
    if name not in _PRESET_TEXTS:
        raise KeyError(f"unknown preset {name!r}; available: "
                       f"{', '.join(preset_names())}")
    delta = float(arg) if arg else 0.0
    return _PRESET_TEXTS[name](delta), _PRESET_GROUPS[name]

"""Multi-group confirmatory factor model as a parameter table.

A model is a list of cell assignments ("entries") into three matrices per
group: the loading matrix, the factor covariance matrix, and the residual
covariance matrix.  Entries are either fixed to a constant or free, and free
entries sharing a label are the same parameter (equality constraints, within
or across groups).  Every cell not listed is fixed at zero.

Implied moments are the stacked per-group half-vectorized covariances
    sigma_g(theta) = vech(L_g P_g L_g' + Psi_g),
with vech taken column-major over the lower triangle, a convention fixed
project-wide.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

LOADING = "loading"
FACTOR_COV = "factor_cov"
RESIDUAL_COV = "residual_cov"

MATRIX_TAGS = (LOADING, FACTOR_COV, RESIDUAL_COV)

DEFAULT_LOADING_START = 0.5
DEFAULT_VARIANCE_START = 1.0
DEFAULT_COVARIANCE_START = 0.0


def vech(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Half-vectorize a symmetric matrix (column-major lower triangle)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"vech expects a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > tol:
        raise ValueError("vech expects a symmetric matrix "
                         f"(max asymmetry {np.max(np.abs(m - m.T)):.3e} > {tol:.1e})")
    q = m.shape[0]
    rows, cols = vech_indices(q)
    return m[rows, cols].copy()


@lru_cache(maxsize=None)
def _vech_indices(q: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(q):
        for i in range(j, q):
            rows.append(i)
            cols.append(j)
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)


def vech_indices(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays of the lower triangle in vech order."""
    return _vech_indices(q)


@lru_cache(maxsize=None)
def _duplication_matrix(q: int) -> np.ndarray:
    d = np.zeros((q * q, q * (q + 1) // 2))
    k = 0
    for j in range(q):
        for i in range(j, q):
            d[i + j * q, k] = 1.0
            d[j + i * q, k] = 1.0
            k += 1
    d.setflags(write=False)
    return d


def duplication_matrix(q: int) -> np.ndarray:
    """Matrix D with D @ vech(A) == vec(A) for symmetric A (vec column-major)."""
    if q < 1:
        raise ValueError("duplication_matrix requires q >= 1")
    return _duplication_matrix(q)


@dataclass(frozen=True)
class ParameterEntry:
    """One cell assignment: (group, matrix, row, col) -> fixed value or free parameter.

    ``value`` is the fixed value when ``free`` is False and the optimizer start
    value when ``free`` is True.
    """

    label: str
    group: int
    matrix: str
    row: int
    col: int
    free: bool
    value: float


@dataclass(frozen=True)
class GroupDef:
    """Observed and latent variable names of one group, in matrix order."""

    observed: tuple[str, ...]
    latent: tuple[str, ...]


@dataclass(frozen=True)
class ModelSpec:
    """A validated multi-group model: groups, entries, and the theta layout.

    ``free_labels`` fixes the order of the free parameter vector; it must list
    each distinct free label exactly once, in order of first appearance.
    """

    groups: tuple[GroupDef, ...]
    entries: tuple[ParameterEntry, ...]
    free_labels: tuple[str, ...]

    def __hash__(self):
        # specs are hashed on every cached-lookup of the compiled structure;
        # computing the structural hash once per instance keeps that cheap
        try:
            return self._cached_hash
        except AttributeError:
            h = hash((self.groups, self.entries, self.free_labels))
            object.__setattr__(self, "_cached_hash", h)
            return h

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_free(self) -> int:
        return len(self.free_labels)

    @property
    def group_moment_counts(self) -> tuple[int, ...]:
        return tuple(len(g.observed) * (len(g.observed) + 1) // 2 for g in self.groups)

    @property
    def n_moments(self) -> int:
        return sum(self.group_moment_counts)

    def free_index(self, label: str) -> int:
        return self.free_labels.index(label)

    def start_values(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.entries:
            if e.free and e.label not in out:
                out[e.label] = e.value
        return out

    def start_theta(self) -> "Theta":
        starts = self.start_values()
        return Theta(np.array([starts[lab] for lab in self.free_labels]),
                     self.free_labels)

    def theta_from(self, values: Mapping[str, float]) -> "Theta":
        """Theta from a label->value mapping; unlisted labels take start values."""
        unknown = set(values) - set(self.free_labels)
        if unknown:
            raise KeyError(f"not free parameters of this model: {sorted(unknown)}")
        starts = self.start_values()
        vals = [float(values.get(lab, starts[lab])) for lab in self.free_labels]
        return Theta(np.asarray(vals), self.free_labels)


@dataclass(frozen=True)
class Theta:
    """Free parameter vector with its label layout."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", tuple(self.labels))
        if vals.shape != (len(self.labels),):
            raise ValueError(f"theta has {vals.shape[0] if vals.ndim == 1 else '?'} "
                             f"values for {len(self.labels)} labels")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, self.values.tolist()))

    def replace(self, values: Mapping[str, float]) -> "Theta":
        d = self.as_dict()
        d.update({k: float(v) for k, v in values.items()})
        return Theta(np.array([d[lab] for lab in self.labels]), self.labels)


@dataclass(frozen=True)
class MomentVector:
    """Stacked per-group vech'd (co)variances, with the group segmentation."""

    values: np.ndarray
    group_sizes: tuple[int, ...]

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in self.group_sizes))
        if vals.shape != (sum(self.group_sizes),):
            raise ValueError("moment vector length does not match group segmentation")

    def segment(self, g: int) -> np.ndarray:
        lo = sum(self.group_sizes[:g])
        return self.values[lo:lo + self.group_sizes[g]]


@dataclass(frozen=True)
class SampleMoments:
    """Per-group sample covariance matrices and sample sizes."""

    covs: tuple[np.ndarray, ...]
    ns: tuple[int, ...]

    def __post_init__(self):
        covs = tuple(np.array(c, dtype=float) for c in self.covs)
        for c in covs:
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ValueError(f"covariance matrix must be square, got {c.shape}")
            if c.size and np.max(np.abs(c - c.T)) > 1e-8:
                raise ValueError("covariance matrix is not symmetric")
            c.setflags(write=False)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        if len(self.covs) != len(self.ns):
            raise ValueError("one sample size per covariance matrix required")

    @property
    def n_total(self) -> int:
        return sum(self.ns)

    def group_weights(self) -> np.ndarray:
        n = self.n_total
        return np.array([ng / n for ng in self.ns])

    def to_moment_vector(self) -> MomentVector:
        segs = [vech(c, tol=1e-8) for c in self.covs]
        return MomentVector(np.concatenate(segs) if segs else np.zeros(0),
                            tuple(len(s) for s in segs))


_MATRIX_SHAPES = {
    LOADING: lambda q, qs: (q, qs),
    FACTOR_COV: lambda q, qs: (qs, qs),
    RESIDUAL_COV: lambda q, qs: (q, q),
}


def validate(spec: ModelSpec) -> list[str]:
    """Check ModelSpec invariants; returns one message per violation."""
    issues: list[str] = []
    seen_slots: dict[tuple, ParameterEntry] = {}
    label_info: dict[str, tuple[bool, float]] = {}

    for e in spec.entries:
        slot = (e.group, e.matrix, e.row, e.col)
        if e.matrix not in MATRIX_TAGS:
            issues.append(f"{slot}: unknown matrix tag {e.matrix!r}")
            continue
        if not 0 <= e.group < spec.n_groups:
            issues.append(f"{slot}: group index out of range")
            continue
        gdef = spec.groups[e.group]
        q, qs = len(gdef.observed), len(gdef.latent)
        nr, nc = _MATRIX_SHAPES[e.matrix](q, qs)
        if not (0 <= e.row < nr and 0 <= e.col < nc):
            issues.append(f"{slot}: indices outside {nr}x{nc} matrix")
            continue
        if slot in seen_slots:
            issues.append(f"{slot}: duplicate entry (labels "
                          f"{seen_slots[slot].label!r} and {e.label!r})")
            continue
        seen_slots[slot] = e
        if e.label in label_info:
            free0, value0 = label_info[e.label]
            if free0 != e.free:
                issues.append(f"{slot}: label {e.label!r} mixes free and fixed status")
            elif value0 != e.value:
                issues.append(f"{slot}: label {e.label!r} has conflicting values "
                              f"{value0} and {e.value}")
        else:
            label_info[e.label] = (e.free, e.value)

    for (g, mat, r, c), e in seen_slots.items():
        if mat in (FACTOR_COV, RESIDUAL_COV) and r != c:
            mirror = seen_slots.get((g, mat, c, r))
            if mirror is None:
                issues.append(f"({g}, {mat}, {r}, {c}): missing mirrored entry "
                              f"for symmetric slot {e.label!r}")
            elif mirror.label != e.label:
                issues.append(f"({g}, {mat}, {r}, {c}): mirrored entry has label "
                              f"{mirror.label!r} != {e.label!r}")

    free_seen = [lab for lab, (free, _) in label_info.items() if free]
    if len(set(spec.free_labels)) != len(spec.free_labels):
        issues.append("free-parameter order contains duplicate labels")
    if set(free_seen) != set(spec.free_labels):
        missing = set(free_seen) - set(spec.free_labels)
        extra = set(spec.free_labels) - set(free_seen)
        if missing:
            issues.append(f"free labels missing from theta order: {sorted(missing)}")
        if extra:
            issues.append(f"theta order lists unknown free labels: {sorted(extra)}")
    return issues


@dataclass(frozen=True)
class _CompiledGroup:
    q: int
    qs: int
    base: tuple[np.ndarray, np.ndarray, np.ndarray]
    # per matrix tag: (theta indices, rows, cols) of free cells
    free_cells: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    vech_rows: np.ndarray
    vech_cols: np.ndarray


@lru_cache(maxsize=None)
def _compiled(spec: ModelSpec) -> tuple[_CompiledGroup, ...]:
    idx = {lab: i for i, lab in enumerate(spec.free_labels)}
    out = []
    for g, gdef in enumerate(spec.groups):
        q, qs = len(gdef.observed), len(gdef.latent)
        base = {LOADING: np.zeros((q, qs)),
                FACTOR_COV: np.zeros((qs, qs)),
                RESIDUAL_COV: np.zeros((q, q))}
        cells: dict[str, list[list[int]]] = {tag: [[], [], []] for tag in MATRIX_TAGS}
        for e in spec.entries:
            if e.group != g:
                continue
            if e.free:
                cells[e.matrix][0].append(idx[e.label])
                cells[e.matrix][1].append(e.row)
                cells[e.matrix][2].append(e.col)
            else:
                base[e.matrix][e.row, e.col] = e.value
        rows, cols = vech_indices(q)
        out.append(_CompiledGroup(
            q=q, qs=qs,
            base=(base[LOADING], base[FACTOR_COV], base[RESIDUAL_COV]),
            free_cells={tag: (np.asarray(t, dtype=np.intp),
                              np.asarray(r, dtype=np.intp),
                              np.asarray(c, dtype=np.intp))
                        for tag, (t, r, c) in cells.items()},
            vech_rows=rows, vech_cols=cols))
    return tuple(out)


def _check_theta(spec: ModelSpec, theta: Theta) -> None:
    if theta.labels != spec.free_labels:
        if len(theta.labels) != len(spec.free_labels):
            raise ValueError(f"theta has {len(theta.labels)} entries, "
                             f"model has {spec.n_free} free parameters")
        raise ValueError("theta label order does not match the model's "
                         "free-parameter order")


def build_matrices(spec: ModelSpec, theta: Theta):
    """Instantiate per-group (loading, factor covariance, residual covariance)."""
    _check_theta(spec, theta)
    vals = theta.values
    out = []
    for cg in _compiled(spec):
        lam, phi, psi = (m.copy() for m in cg.base)
        for mat, tag in ((lam, LOADING), (phi, FACTOR_COV), (psi, RESIDUAL_COV)):
            t, r, c = cg.free_cells[tag]
            if len(t):
                mat[r, c] = vals[t]
        out.append((lam, phi, psi))
    return out


def implied_sigma(spec: ModelSpec, theta: Theta) -> MomentVector:
    """Model-implied moments: stacked vech(L P L' + Psi) over groups."""
    segs = []
    for (lam, phi, psi), cg in zip(build_matrices(spec, theta), _compiled(spec)):
        sig = lam @ phi @ lam.T + psi
        segs.append(sig[cg.vech_rows, cg.vech_cols])
    return MomentVector(np.concatenate(segs) if segs else np.zeros(0),
                        tuple(len(s) for s in segs))


def moment_labels(spec: ModelSpec) -> list[str]:
    """Row labels of the stacked moment vector, e.g. ``g1:y11~~y21``."""
    labels = []
    for g, gdef in enumerate(spec.groups):
        names = gdef.observed
        rows, cols = vech_indices(len(names))
        for i, j in zip(rows, cols):
            labels.append(f"g{g + 1}:{names[i]}~~{names[j]}")
    return labels

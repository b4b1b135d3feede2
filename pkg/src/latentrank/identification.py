"""Jacobian-based identification diagnostics.

The Jacobian of the implied moments with respect to the free parameters has
one row per (group, variance/covariance) and one column per parameter.  When
its column rank drops below the parameter count, the gradient directions
become linearly dependent: estimation stops converging, asymptotic variances
blow up, and inadmissible estimates proliferate.  This module computes the
Jacobian analytically, measures its numeric rank and nullspace, reports which
parameters a deficiency touches, and turns the Jacobian into Fisher
information and standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import (
    FACTOR_COV,
    LOADING,
    ModelSpec,
    RESIDUAL_COV,
    Theta,
    _compiled,
    build_matrices,
    implied_sigma,
    moment_labels,
)


@lru_cache(maxsize=None)
def _diff_tensors(spec: ModelSpec):
    """Per group, the constant differentials of (loading, factor cov, residual
    cov) with respect to each theta component, stacked as (p, ...) tensors."""
    p = spec.n_free
    out = []
    for cg in _compiled(spec):
        d_lam = np.zeros((p, cg.q, cg.qs))
        d_phi = np.zeros((p, cg.qs, cg.qs))
        d_psi = np.zeros((p, cg.q, cg.q))
        for tensor, tag in ((d_lam, LOADING), (d_phi, FACTOR_COV),
                            (d_psi, RESIDUAL_COV)):
            t, r, c = cg.free_cells[tag]
            tensor[t, r, c] = 1.0
        out.append((d_lam, d_phi, d_psi))
    return tuple(out)


def _jacobian_blocks(spec: ModelSpec, mats) -> list[np.ndarray]:
    """Per-group Jacobian blocks given prebuilt model matrices."""
    diffs = _diff_tensors(spec)
    blocks = []
    for (lam, phi, psi), cg, (d_lam, d_phi, d_psi) in zip(mats, _compiled(spec),
                                                          diffs):
        phi_lam_t = phi @ lam.T
        b = d_lam @ phi_lam_t
        d_sigma = b + b.transpose(0, 2, 1)
        d_sigma += (lam @ d_phi) @ lam.T
        d_sigma += d_psi
        blocks.append(d_sigma[:, cg.vech_rows, cg.vech_cols].T)
    return blocks


def analytic_jacobian(spec: ModelSpec, theta: Theta) -> np.ndarray:
    """Exact Jacobian of the stacked implied moments, shape (p*, p).

    Column ordering follows the model's free-parameter order; row ordering
    follows the moment vector (groups in order, vech within group).
    """
    return np.vstack(_jacobian_blocks(spec, build_matrices(spec, theta)))


def numeric_jacobian(spec: ModelSpec, theta: Theta, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian; the independent cross-check for the
    analytic one."""
    if h <= 0:
        raise ValueError("step size must be positive")
    base = theta.values
    cols = []
    for i in range(len(base)):
        up = base.copy()
        up[i] += h
        dn = base.copy()
        dn[i] -= h
        hi = implied_sigma(spec, Theta(up, theta.labels)).values
        lo = implied_sigma(spec, Theta(dn, theta.labels)).values
        cols.append((hi - lo) / (2.0 * h))
    return np.column_stack(cols)


def sigma_hessian_contraction(spec: ModelSpec, theta: Theta,
                              weights_by_group: Sequence[np.ndarray]) -> np.ndarray:
    """sum_i w_i * d2 sigma_i / dtheta dtheta', with one weight vector per
    group aligned to its vech segment.  Used for the observed Hessian."""
    mats = build_matrices(spec, theta)
    diffs = _diff_tensors(spec)
    p = spec.n_free
    total = np.zeros((p, p))
    for (lam, phi, _), cg, (d_lam, d_phi, _), w in zip(mats, _compiled(spec),
                                                       diffs, weights_by_group):
        w_low = np.zeros((cg.q, cg.q))
        w_low[cg.vech_rows, cg.vech_cols] = w
        w_sym = 0.5 * (w_low + w_low.T)
        e1 = np.einsum("il,aij,jk,blk->ab", w_sym, d_lam, phi, d_lam)
        e2 = np.einsum("il,aij,bjk,lk->ab", w_sym, d_lam, d_phi, lam)
        total += 2.0 * (e1 + e2 + e2.T)
    return total


@dataclass(frozen=True)
class JacobianReport:
    """SVD summary of a Jacobian: singular values, numeric rank, nullspace."""

    delta: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    singular_values: np.ndarray
    rank: int
    tolerance: float
    nullspace: np.ndarray  # p x (p - rank), columns orthonormal

    @property
    def deficiency(self) -> int:
        return len(self.col_labels) - self.rank

    @property
    def condition_number(self) -> float:
        sv = self.singular_values
        if sv[-1] <= 0.0:
            return np.inf
        return float(sv[0] / sv[-1])


def rank_report(delta: np.ndarray,
                row_labels: Sequence[str] | None = None,
                col_labels: Sequence[str] | None = None,
                tol: float | None = None) -> JacobianReport:
    """Numeric rank and nullspace of a Jacobian via SVD.

    The default tolerance is the usual max(dim) * sigma_max * machine epsilon;
    pass ``tol`` for an absolute cutoff.
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("Jacobian contains non-finite entries")
    n_rows, n_cols = delta.shape
    _, sv, vt = np.linalg.svd(delta, full_matrices=True)
    sv_full = np.zeros(n_cols)
    sv_full[:len(sv)] = sv
    s_max = sv_full[0] if len(sv_full) else 0.0
    used_tol = tol if tol is not None else max(n_rows, n_cols) * s_max * np.finfo(float).eps
    rank = int(np.sum(sv_full > used_tol))
    nullspace = vt[rank:].T.copy()
    return JacobianReport(
        delta=delta,
        row_labels=tuple(row_labels) if row_labels is not None
        else tuple(f"row{i}" for i in range(n_rows)),
        col_labels=tuple(col_labels) if col_labels is not None
        else tuple(f"col{j}" for j in range(n_cols)),
        singular_values=sv_full,
        rank=rank,
        tolerance=float(used_tol),
        nullspace=nullspace,
    )


def jacobian_report(spec: ModelSpec, theta: Theta,
                    tol: float | None = None) -> JacobianReport:
    """Convenience: analytic Jacobian of a model plus its rank report."""
    return rank_report(analytic_jacobian(spec, theta),
                       row_labels=moment_labels(spec),
                       col_labels=spec.free_labels, tol=tol)


@dataclass(frozen=True)
class AffectedSet:
    """Partition of the parameters by involvement in the nullspace."""

    affected: tuple[str, ...]
    orthogonal: tuple[str, ...]
    components: dict[str, float]  # max |nullspace component| per parameter
    threshold: float


def affected_params(report: JacobianReport, threshold: float = 1e-8) -> AffectedSet:
    """Split parameters into those the deficiency touches and those it leaves
    alone (max-abs component over unit-normalized nullspace basis vectors)."""
    p = len(report.col_labels)
    if report.nullspace.shape[1] == 0:
        comps = {lab: 0.0 for lab in report.col_labels}
        return AffectedSet(affected=(), orthogonal=tuple(report.col_labels),
                           components=comps, threshold=threshold)
    basis = report.nullspace / np.linalg.norm(report.nullspace, axis=0, keepdims=True)
    mags = np.max(np.abs(basis), axis=1)
    comps = {lab: float(m) for lab, m in zip(report.col_labels, mags)}
    affected = tuple(lab for lab, m in comps.items() if m >= threshold)
    orthogonal = tuple(lab for lab, m in comps.items() if m < threshold)
    return AffectedSet(affected=affected, orthogonal=orthogonal,
                       components=comps, threshold=threshold)


@dataclass(frozen=True)
class PatternCheckResult:
    """Outcome of checking the one-dimensional nullspace of the split-ballot
    template at an all-equal point against its closed form."""

    applicable: bool
    passed: bool
    rank: int
    expected: dict[str, float]
    observed: dict[str, float]
    max_abs_error: float
    message: str


def nullspace_pattern_check(lam: float, rho: float, tol: float = 1e-8,
                            rank_tol: float | None = None) -> PatternCheckResult:
    """At the point with all trait loadings equal to ``lam`` and all trait
    correlations equal to ``rho``, the split-ballot template loses exactly one
    rank, and the nullspace direction has a closed form: after scaling so the
    first method variance component is -1, method-1 loadings carry
    1/(2*lam*rho), the remaining loadings -1/(2*lam*rho), method-1 residual
    variances (rho-1)/rho, the remaining residual variances -(rho-1)/rho, the
    trait correlations exactly 0, and the other two method variances +1.

    When the computed nullspace does not match, the observed pattern is
    returned rather than asserted.
    """
    from . import presets

    if rho == 0.0 or lam == 0.0:
        raise ValueError("the closed form needs lam != 0 and rho != 0")
    spec = presets.sbmtmm_spec()
    theta = presets.sbmtmm_equal_theta(lam=lam, rho=rho)
    report = jacobian_report(spec, theta, tol=rank_tol)
    labels = report.col_labels

    if report.deficiency != 1:
        return PatternCheckResult(
            applicable=False, passed=False, rank=report.rank,
            expected={}, observed={}, max_abs_error=np.nan,
            message=f"deficiency is {report.deficiency}, not 1 "
                    f"(rank {report.rank} of {len(labels)})")

    vec = report.nullspace[:, 0]
    anchor = vec[labels.index("phi4")]
    if anchor == 0.0:
        return PatternCheckResult(
            applicable=False, passed=False, rank=report.rank, expected={},
            observed={lab: float(v) for lab, v in zip(labels, vec)},
            max_abs_error=np.nan,
            message="cannot normalize: phi4 component is zero")
    vec = -vec / anchor

    expected: dict[str, float] = {}
    for lab in presets.SBMTMM_LOADINGS:
        sign = 1.0 if lab in presets.SBMTMM_METHOD1_LOADINGS else -1.0
        expected[lab] = sign / (2.0 * lam * rho)
    for lab in presets.SBMTMM_PSIS:
        sign = 1.0 if lab in presets.SBMTMM_METHOD1_PSIS else -1.0
        expected[lab] = sign * (rho - 1.0) / rho
    for lab in presets.SBMTMM_RHOS:
        expected[lab] = 0.0
    expected.update(phi4=-1.0, phi5=1.0, phi6=1.0)

    observed = {lab: float(v) for lab, v in zip(labels, vec)}
    err = max(abs(observed[lab] - expected[lab]) for lab in expected)
    passed = err < tol
    message = ("nullspace matches the closed form" if passed else
               f"nullspace deviates from the closed form by {err:.3e}")
    return PatternCheckResult(applicable=True, passed=passed, rank=report.rank,
                              expected=expected, observed=observed,
                              max_abs_error=float(err), message=message)


@dataclass(frozen=True)
class InformationReport:
    """Fisher information, its conditioning, and the standard errors it
    yields when invertible."""

    information: np.ndarray
    condition_number: float
    available: bool
    asymptotic_variance: np.ndarray | None
    standard_errors: dict[str, float] | None
    labels: tuple[str, ...]


def fisher_information(delta: np.ndarray, weight, ns: Sequence[int],
                       labels: Sequence[str] | None = None,
                       singular_cond: float = 1e12) -> InformationReport:
    """Information = sum_g w_g Delta_g' V_g Delta_g with w_g = n_g / n.

    Standard errors are sqrt(diag(information^-1) / n); they are reported as
    unavailable when the condition number reaches ``singular_cond``.
    """
    blocks = getattr(weight, "blocks", weight)
    ns = [int(n) for n in ns]
    n_total = sum(ns)
    p = delta.shape[1]
    info = np.zeros((p, p))
    lo = 0
    for v, n_g in zip(blocks, ns):
        k = v.shape[0]
        d_g = delta[lo:lo + k]
        info += (n_g / n_total) * (d_g.T @ v @ d_g)
        lo += k
    if lo != delta.shape[0]:
        raise ValueError("weight blocks do not cover the Jacobian rows")

    ev = np.linalg.eigvalsh(info)
    cond = np.inf if ev[0] <= 0.0 else float(ev[-1] / ev[0])
    labels = tuple(labels) if labels is not None else tuple(
        f"p{i}" for i in range(p))
    if not np.isfinite(cond) or cond >= singular_cond:
        return InformationReport(information=info, condition_number=cond,
                                 available=False, asymptotic_variance=None,
                                 standard_errors=None, labels=labels)
    avar = np.linalg.inv(info) / n_total
    ses = {lab: float(np.sqrt(max(avar[i, i], 0.0)))
           for i, lab in enumerate(labels)}
    return InformationReport(information=info, condition_number=cond,
                             available=True, asymptotic_variance=avar,
                             standard_errors=ses, labels=labels)


@dataclass(frozen=True)
class RankScanRow:
    delta_value: float
    smallest_singular_value: float
    rank: int
    condition_number: float


def rank_scan(spec: ModelSpec, theta_of: Callable[[float], Theta],
              grid: Iterable[float], tol: float | None = None) -> list[RankScanRow]:
    """Rank, smallest singular value, and condition number of the Jacobian
    along a one-parameter family of points."""
    grid = list(grid)
    if not grid:
        raise ValueError("rank_scan needs a nonempty grid")
    rows = []
    for d in grid:
        report = jacobian_report(spec, theta_of(d), tol=tol)
        rows.append(RankScanRow(
            delta_value=float(d),
            smallest_singular_value=float(report.singular_values[-1]),
            rank=report.rank,
            condition_number=report.condition_number))
    return rows

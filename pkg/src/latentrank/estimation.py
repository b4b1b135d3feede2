"""Weighted least squares / maximum likelihood estimation.

The loss is the weighted sum of squared moment residuals

    F(theta) = sum_g w_g [s_g - sigma_g(theta)]' V_g [s_g - sigma_g(theta)],

with group weights w_g = n_g / n.  Choosing the normal-theory weight
V = D'(Sigma^-1 x Sigma^-1)D / 2 makes the minimizer the maximum likelihood
estimate; V may be built from the sample covariances once ("sample" policy)
or refreshed from the implied covariances every iteration ("iterative"
policy, the ML convention).

Optimization runs over unconstrained reals: inadmissible estimates (negative
variances, non-PSD covariance blocks) are reported, never prevented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .identification import (
    _jacobian_blocks,
    analytic_jacobian,
    sigma_hessian_contraction,
)
from .model import (
    ModelSpec,
    MomentVector,
    SampleMoments,
    Theta,
    build_matrices,
    duplication_matrix,
    implied_sigma,
)

GRADIENT_DESCENT = "gd"
FISHER_SCORING = "fisher"
NEWTON_RAPHSON = "newton"

SAMPLE = "sample"
ITERATIVE = "iterative"

GRADIENT_TOL = "gradient_tol"
MAX_ITER = "max_iter"
SINGULAR_INFORMATION = "singular_information"
LINE_FAILURE = "line_failure"
DATA_DEGENERATE = "data_degenerate"


class NonPositiveDefiniteError(ValueError):
    """A matrix required to be positive-definite is not."""

    def __init__(self, what: str, min_eigenvalue: float):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(f"{what} is not positive-definite "
                         f"(smallest eigenvalue {min_eigenvalue:.6e})")


@dataclass(frozen=True)
class WeightMatrix:
    """Block-diagonal positive-definite weight matrix, one block per group."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)
        for b in blocks:
            try:
                np.linalg.cholesky(b)
            except np.linalg.LinAlgError:
                ev = np.linalg.eigvalsh(b)[0]
                raise NonPositiveDefiniteError("weight matrix block", ev)
        object.__setattr__(self, "blocks", blocks)

    @property
    def size(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def full(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        lo = 0
        for b in self.blocks:
            k = b.shape[0]
            out[lo:lo + k, lo:lo + k] = b
            lo += k
        return out


def ml_weight(sigma_hat: np.ndarray) -> np.ndarray:
    """Normal-theory weight block D'(Sigma^-1 x Sigma^-1)D / 2 for one group.

    Built directly in vech coordinates, which is algebraically identical to
    the duplication-matrix sandwich but avoids forming the q^2 x q^2
    Kronecker product.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    try:
        np.linalg.cholesky(sigma_hat)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(sigma_hat)
        raise NonPositiveDefiniteError("covariance matrix", ev[0])
    a = np.linalg.inv(sigma_hat)
    from .model import vech_indices

    r, c = vech_indices(sigma_hat.shape[0])
    base = a[np.ix_(r, r)] * a[np.ix_(c, c)] + a[np.ix_(r, c)] * a[np.ix_(c, r)]
    u = np.where(r == c, 0.5, 1.0)
    return np.outer(u, u) * base


def identity_weight(spec: ModelSpec) -> WeightMatrix:
    """Unweighted least squares blocks (useful for tests and quick checks)."""
    return WeightMatrix(tuple(np.eye(k) for k in spec.group_moment_counts))


def sample_weight(moments: SampleMoments) -> WeightMatrix:
    return WeightMatrix(tuple(ml_weight(s) for s in moments.covs))


def _check_dims(spec: ModelSpec, s: MomentVector):
    if s.group_sizes != spec.group_moment_counts:
        raise ValueError(f"moment vector segmentation {s.group_sizes} does not "
                         f"match the model's {spec.group_moment_counts}")


def _segments(spec: ModelSpec, vec: np.ndarray):
    out, lo = [], 0
    for k in spec.group_moment_counts:
        out.append(vec[lo:lo + k])
        lo += k
    return out


def wls_loss(spec: ModelSpec, theta: Theta, s: MomentVector,
             weight: WeightMatrix, group_weights) -> float:
    """F = sum_g w_g r_g' V_g r_g with r_g the moment residual of group g."""
    _check_dims(spec, s)
    resid = s.values - implied_sigma(spec, theta).values
    total = 0.0
    for r_g, v_g, w_g in zip(_segments(spec, resid), weight.blocks,
                             np.asarray(group_weights, dtype=float)):
        total += w_g * float(r_g @ v_g @ r_g)
    return total


def gradient(spec: ModelSpec, theta: Theta, s: MomentVector,
             weight: WeightMatrix, group_weights) -> np.ndarray:
    """Exact gradient of the loss: -2 sum_g w_g Delta_g' V_g r_g.

    (The descent direction is the negative gradient; the factor -2 comes from
    differentiating the quadratic form exactly.)
    """
    _check_dims(spec, s)
    resid = s.values - implied_sigma(spec, theta).values
    delta = analytic_jacobian(spec, theta)
    g = np.zeros(spec.n_free)
    lo = 0
    for r_g, v_g, w_g in zip(_segments(spec, resid), weight.blocks,
                             np.asarray(group_weights, dtype=float)):
        k = len(r_g)
        g += -2.0 * w_g * (delta[lo:lo + k].T @ (v_g @ r_g))
        lo += k
    return g


def check_admissibility(spec: ModelSpec, theta: Theta,
                        tol: float = 1e-10) -> tuple[bool, tuple[str, ...]]:
    """A solution is admissible when every factor and residual covariance
    matrix is positive-semidefinite with nonnegative diagonal."""
    issues: list[str] = []
    for g, ((_, phi, psi), gdef) in enumerate(zip(build_matrices(spec, theta),
                                                  spec.groups)):
        for mat, names, what in ((phi, gdef.latent, "factor"),
                                 (psi, gdef.observed, "residual")):
            if mat.shape[0] == 0:
                continue
            for i, name in enumerate(names):
                if mat[i, i] < -tol:
                    issues.append(f"g{g + 1}: {what} variance of {name} "
                                  f"is {mat[i, i]:.6g}")
            ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))[0]
            if ev < -tol:
                issues.append(f"g{g + 1}: {what} covariance matrix is not "
                              f"positive-semidefinite (smallest eigenvalue "
                              f"{ev:.6g})")
    return (len(issues) == 0, tuple(issues))


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``tol`` bounds the max-abs gradient scaled by max(1, F).  A fit converges
    only when that bound is met with a numerically nonsingular information
    matrix (condition number below ``singular_cond``).  When the information
    is singular, iteration continues on ridged steps while the gradient is
    large and stops with SINGULAR_INFORMATION once the gradient falls below
    sqrt(tol) times the scale, mirroring optimizers that pair their
    convergence tests with an explicit singularity test on the Hessian.
    """

    optimizer: str = FISHER_SCORING
    gamma: float = 0.1
    tol: float = 1e-8
    max_iter: int = 500
    weights: str = ITERATIVE
    singular_cond: float = 1e12
    max_halvings: int = 20

    def __post_init__(self):
        if self.optimizer not in (GRADIENT_DESCENT, FISHER_SCORING,
                                  NEWTON_RAPHSON):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weights not in (SAMPLE, ITERATIVE):
            raise ValueError(f"unknown weight policy {self.weights!r}")
        if self.tol <= 0 or self.gamma <= 0:
            raise ValueError("tolerances and learning rate must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class FitResult:
    theta_hat: Theta
    converged: bool
    stop_reason: str
    loss: float
    iterations: int
    gradient_norm: float
    admissible: bool
    admissibility_issues: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def _implied_covs(mats):
    return [lam @ phi @ lam.T + psi for lam, phi, psi in mats]


def _iterative_blocks(mats, previous, notes: list[str], iteration: int):
    """Weight blocks from the implied covariances; falls back to the previous
    blocks (or a ridged covariance at the start) when they are not PD."""
    blocks = []
    for g, sig in enumerate(_implied_covs(mats)):
        try:
            blocks.append(ml_weight(sig))
        except NonPositiveDefiniteError as err:
            if previous is not None:
                notes.append(f"iteration {iteration}: implied covariance of "
                             f"group {g + 1} not PD; kept previous weights")
                return previous
            ridge = abs(err.min_eigenvalue) * 1.1 + 1e-8
            notes.append(f"start values give a non-PD implied covariance in "
                         f"group {g + 1}; ridged by {ridge:.3e}")
            blocks.append(ml_weight(sig + ridge * np.eye(sig.shape[0])))
    return tuple(blocks)


def fit(spec: ModelSpec, moments: SampleMoments, config: FitConfig = FitConfig(),
        start: Theta | None = None) -> FitResult:
    """Minimize the weighted least squares loss from the model's start values.

    Iterates theta <- theta - A g with A the scalar learning rate (gradient
    descent), the inverse expected information (Fisher scoring), or the
    inverse observed Hessian (Newton-Raphson).  Steps that increase the loss
    are halved up to ``max_halvings`` times; iteration stops on the scaled
    gradient tolerance (converged), the iteration cap, a numerically singular
    information matrix, or a failed step.
    """
    if len(moments.covs) != spec.n_groups:
        raise ValueError(f"model has {spec.n_groups} groups, moments have "
                         f"{len(moments.covs)}")
    for g, (cov, gdef) in enumerate(zip(moments.covs, spec.groups)):
        if cov.shape[0] != len(gdef.observed):
            raise ValueError(f"group {g + 1} covariance is {cov.shape[0]}x"
                             f"{cov.shape[0]}, model expects "
                             f"{len(gdef.observed)} variables")

    s = moments.to_moment_vector()
    group_weights = moments.group_weights()
    theta = start if start is not None else spec.start_theta()
    notes: list[str] = []

    from .model import _compiled  # compiled vech index arrays

    compiled = _compiled(spec)

    def evaluate(th: Theta):
        mats = build_matrices(spec, th)
        sig = np.concatenate([
            (lam @ phi @ lam.T + psi)[cg.vech_rows, cg.vech_cols]
            for (lam, phi, psi), cg in zip(mats, compiled)])
        return mats, sig

    def in_ml_domain(mats) -> bool:
        # the likelihood the iterative weights emulate exists only where the
        # implied covariances are PD; candidates outside that cone are
        # rejected the way an ML line search runs into the barrier
        for sig_g in _implied_covs(mats):
            try:
                np.linalg.cholesky(sig_g)
            except np.linalg.LinAlgError:
                return False
        return True

    def loss_of(sig: np.ndarray) -> float:
        resid = s.values - sig
        total = 0.0
        for r_g, v_g, w_g in zip(_segments(spec, resid), weight_blocks,
                                 group_weights):
            total += w_g * float(r_g @ v_g @ r_g)
        return total

    mats, sig = evaluate(theta)
    if config.weights == SAMPLE:
        weight_blocks = sample_weight(moments).blocks
    else:
        weight_blocks = _iterative_blocks(mats, None, notes, 0)

    stop_reason = MAX_ITER
    iterations = 0
    grad_norm = np.inf
    last_step = np.inf   # relative size of the last accepted step
    damping = 0.0        # Levenberg adjustment, carried across iterations

    for t in range(config.max_iter):
        if config.weights == ITERATIVE and t > 0:
            weight_blocks = _iterative_blocks(mats, weight_blocks, notes, t)

        resid = s.values - sig
        current = loss_of(sig)
        delta_blocks = _jacobian_blocks(spec, mats)
        g = np.zeros(spec.n_free)
        info = np.zeros((spec.n_free, spec.n_free))
        weighted_resids = []
        for r_g, v_g, w_g, d_g in zip(_segments(spec, resid), weight_blocks,
                                      group_weights, delta_blocks):
            vr = v_g @ r_g
            weighted_resids.append(w_g * vr)
            g += -2.0 * w_g * (d_g.T @ vr)
            info += w_g * (d_g.T @ v_g @ d_g)

        ev = np.linalg.eigvalsh(info)
        cond = np.inf if ev[-1] <= 0 or ev[0] <= 0 else ev[-1] / ev[0]
        singular = not np.isfinite(cond) or cond >= config.singular_cond
        grad_norm = float(np.max(np.abs(g)))
        scale = max(1.0, current)

        if not singular and grad_norm < config.tol * scale:
            stop_reason = GRADIENT_TOL
            iterations = t
            break
        if singular and (grad_norm < config.tol * scale
                         or last_step < np.sqrt(config.tol)):
            # stalled iteration with a numerically singular information
            # matrix: the analogue of a "singular convergence" verdict
            stop_reason = SINGULAR_INFORMATION
            iterations = t
            break

        def acceptable(cand_mats, cand_sig) -> bool:
            return loss_of(cand_sig) <= current and (
                config.weights != ITERATIVE or in_ml_domain(cand_mats))

        accepted = None
        if config.optimizer == GRADIENT_DESCENT:
            direction = config.gamma * g
            alpha = 1.0
            for _ in range(config.max_halvings + 1):
                cand = Theta(theta.values - alpha * direction, theta.labels)
                cand_mats, cand_sig = evaluate(cand)
                if acceptable(cand_mats, cand_sig):
                    accepted = (cand, cand_mats, cand_sig)
                    break
                alpha *= 0.5
        else:
            newton_dir = None
            if config.optimizer == NEWTON_RAPHSON and not singular:
                hess = 2.0 * info - 2.0 * sigma_hessian_contraction(
                    spec, theta, weighted_resids)
                try:
                    cand_dir = np.linalg.solve(hess, g)
                    if float(g @ cand_dir) > 0.0:
                        newton_dir = cand_dir
                except np.linalg.LinAlgError:
                    pass

            # Information steps with escalating Levenberg damping: a clean
            # iteration takes the undamped step; when a step fails, damping
            # bends the direction toward the gradient and shortens it, which
            # handles ragged small-sample surfaces that defeat plain halving.
            scale_diag = np.maximum(np.diag(info), 1e-12)
            for attempt in range(config.max_halvings + 1):
                if attempt == 0 and newton_dir is not None:
                    direction = newton_dir
                else:
                    lam = max(damping, 1e-8) if singular else damping
                    a = 2.0 * info + 2.0 * lam * np.diag(scale_diag)
                    try:
                        direction = np.linalg.solve(a, g)
                    except np.linalg.LinAlgError:
                        damping = max(8.0 * damping, 1e-6)
                        continue
                cand = Theta(theta.values - direction, theta.labels)
                cand_mats, cand_sig = evaluate(cand)
                if acceptable(cand_mats, cand_sig):
                    accepted = (cand, cand_mats, cand_sig)
                    damping = 0.0 if damping < 1e-9 else damping / 8.0
                    break
                damping = max(8.0 * damping, 1e-6)

        if accepted is None:
            stop_reason = LINE_FAILURE
            iterations = t
            break
        last_step = float(np.max(np.abs(accepted[0].values - theta.values))
                          / (1.0 + np.max(np.abs(theta.values))))
        theta, mats, sig = accepted
        iterations = t + 1

    final_loss = loss_of(sig)
    admissible, issues = check_admissibility(spec, theta)
    return FitResult(theta_hat=theta,
                     converged=stop_reason == GRADIENT_TOL,
                     stop_reason=stop_reason,
                     loss=float(final_loss),
                     iterations=iterations,
                     gradient_norm=grad_norm,
                     admissible=admissible,
                     admissibility_issues=issues,
                     warnings=tuple(notes))

"""Monte Carlo experiments on rank-deficiency-driven estimation failure.

Two experiments ship:

* ``sbmtmm`` generates nine observed variables from a correlated-trait,
  uncorrelated-method population whose trait correlations are
  (0.5 - delta, 0.5, 0.5 + delta), applies the split-ballot missingness
  pattern (half the sample never sees method 3, the other half never sees
  method 2), and fits the two-group template to the resulting group
  covariances.  At delta = 0 the template's Jacobian is rank-deficient.

* ``shapiro`` generates three indicators from a factor model whose third
  residual variance is exactly zero and fits the direct-variance
  parameterization, so negative variance estimates are possible and occur.

Replicates are seeded independently from (master seed, condition index,
replicate index), so results are bit-identical regardless of how many
workers run them.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import presets
from .estimation import (
    DATA_DEGENERATE,
    FitConfig,
    NonPositiveDefiniteError,
    WeightMatrix,
    fit,
    ml_weight,
)
from .identification import analytic_jacobian, fisher_information
from .model import ModelSpec, SampleMoments, Theta, build_matrices

SBMTMM = "sbmtmm"
SHAPIRO = "shapiro"

# data columns are trait-major: y11 y12 y13 y21 y22 y23 y31 y32 y33
_METHOD2_COLS = (1, 4, 7)
_METHOD3_COLS = (2, 5, 8)
_GROUP1_KEEP = (0, 1, 3, 4, 6, 7)   # methods 1 and 2
_GROUP2_KEEP = (0, 2, 3, 5, 6, 8)   # methods 1 and 3


@dataclass(frozen=True)
class PopulationModel:
    """Single-population generating model and its covariance matrix."""

    lam: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("lam", "phi", "psi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ev = np.linalg.eigvalsh(self.sigma)[0]
        if ev <= 0.0:
            raise NonPositiveDefiniteError("population covariance", ev)

    @property
    def sigma(self) -> np.ndarray:
        return self.lam @ self.phi @ self.lam.T + self.psi


@lru_cache(maxsize=None)
def sbmtmm_population(delta: float) -> PopulationModel:
    lam = np.zeros((9, 6))
    for i in range(9):
        lam[i, i // 3] = 1.0        # trait factor
        lam[i, 3 + i % 3] = 1.0     # method factor
    phi = np.eye(6)
    phi[0, 1] = phi[1, 0] = 0.5 - delta
    phi[0, 2] = phi[2, 0] = 0.5
    phi[1, 2] = phi[2, 1] = 0.5 + delta
    return PopulationModel(lam=lam, phi=phi, psi=np.eye(9))


@lru_cache(maxsize=None)
def shapiro_population() -> PopulationModel:
    lam = np.array(presets.SHAPIRO_LAMBDAS).reshape(3, 1)
    return PopulationModel(lam=lam, phi=np.eye(1),
                           psi=np.diag(presets.SHAPIRO_PSI_VARS))


def mvn_sample(sigma: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws from MVN(0, sigma) via the Cholesky factor."""
    sigma = np.asarray(sigma, dtype=float)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NonPositiveDefiniteError("sampling covariance",
                                       np.linalg.eigvalsh(sigma)[0])
    return rng.standard_normal((n, sigma.shape[0])) @ chol.T


def _cov(x: np.ndarray) -> np.ndarray:
    """Covariance with denominator n (the ML convention)."""
    xc = x - x.mean(axis=0)
    return xc.T @ xc / x.shape[0]


def split_ballot_moments(data: np.ndarray) -> SampleMoments:
    """Group covariances of a split-ballot design applied to complete data.

    The first half of the rows drops the method-3 columns, the second half
    the method-2 columns; each group contributes a 6x6 covariance matrix
    (denominator n_g) over its observed variables.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if data.ndim != 2 or data.shape[1] != 9:
        raise ValueError(f"expected an n x 9 data matrix, got {data.shape}")
    if n % 2:
        raise ValueError("split-ballot design needs an even sample size")
    half = n // 2
    g1 = data[:half][:, _GROUP1_KEEP]
    g2 = data[half:][:, _GROUP2_KEEP]
    return SampleMoments((_cov(g1), _cov(g2)), (half, half))


@dataclass(frozen=True)
class SimCondition:
    """One cell of the factorial design, with its enumeration index."""

    n: int
    delta: float
    index: int

    def __post_init__(self):
        if self.n % 2:
            raise ValueError("sample size must be even (split in halves)")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class SimConfig:
    """Experiment definition: grids, replicate count, seeding, fit settings."""

    experiment: str = SBMTMM
    n_grid: tuple[int, ...] = (50, 75, 100, 500, 1_000, 10_000, 100_000)
    delta_grid: tuple[float, ...] = (0.0, 0.01, 0.05, 0.1, 0.2, 0.3)
    nsim: int = 200
    seed: int = 3452
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.experiment not in (SBMTMM, SHAPIRO):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.n_grid or not self.delta_grid:
            raise ValueError("grids must be nonempty")
        if self.nsim < 1:
            raise ValueError("nsim must be >= 1")

    def conditions(self) -> list[SimCondition]:
        out = []
        for n in self.n_grid:
            for d in self.delta_grid:
                out.append(SimCondition(n=int(n), delta=float(d),
                                        index=len(out)))
        return out


@dataclass(frozen=True)
class SimRecord:
    """One Monte Carlo replicate."""

    experiment: str
    n: int
    delta: float
    rep: int
    converged: bool
    stop_reason: str
    admissible: bool
    theta: tuple[float, ...]
    loss: float


@lru_cache(maxsize=None)
def _experiment_spec(experiment: str, delta: float) -> ModelSpec:
    if experiment == SBMTMM:
        return presets.sbmtmm_spec(delta)
    return presets.shapiro_spec()


def experiment_labels(config: SimConfig) -> tuple[str, ...]:
    return _experiment_spec(config.experiment, config.delta_grid[0]).free_labels


def run_replicate(condition: SimCondition, rep: int, config: SimConfig) -> SimRecord:
    """Generate data, build moments, fit, and record one replicate.

    The generator is seeded from (master seed, condition index, replicate
    index), which makes every record reproducible in isolation.
    """
    rng = np.random.default_rng([config.seed, condition.index, rep])
    spec = _experiment_spec(config.experiment, condition.delta)
    if config.experiment == SBMTMM:
        pop = sbmtmm_population(condition.delta)
        data = mvn_sample(pop.sigma, condition.n, rng)
        try:
            moments = split_ballot_moments(data)
            result = fit(spec, moments, config.fit)
        except NonPositiveDefiniteError:
            return SimRecord(config.experiment, condition.n, condition.delta,
                             rep, False, DATA_DEGENERATE, False,
                             tuple([np.nan] * spec.n_free), np.nan)
    else:
        pop = shapiro_population()
        data = mvn_sample(pop.sigma, condition.n, rng)
        try:
            moments = SampleMoments((_cov(data),), (condition.n,))
            result = fit(spec, moments, config.fit)
        except NonPositiveDefiniteError:
            return SimRecord(config.experiment, condition.n, condition.delta,
                             rep, False, DATA_DEGENERATE, False,
                             tuple([np.nan] * spec.n_free), np.nan)
    return SimRecord(config.experiment, condition.n, condition.delta, rep,
                     result.converged, result.stop_reason, result.admissible,
                     tuple(result.theta_hat.values.tolist()),
                     float(result.loss))


def _run_condition(args) -> list[SimRecord]:
    config, condition = args
    return [run_replicate(condition, rep, config) for rep in range(config.nsim)]


@dataclass(frozen=True)
class ParamStats:
    mean_all: float
    sd_all: float
    mean_converged: float
    sd_converged: float
    mean_nonconverged: float
    sd_nonconverged: float


@dataclass(frozen=True)
class ConditionSummary:
    n: int
    delta: float
    nsim: int
    prop_converged: float
    se_converged: float
    prop_admissible: float
    se_admissible: float
    params: dict[str, ParamStats]


@dataclass(frozen=True)
class ExperimentResult:
    config: SimConfig
    labels: tuple[str, ...]
    records: list[SimRecord]
    summaries: list[ConditionSummary]


def _mean_sd(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0 or np.all(np.isnan(values)):
        return (np.nan, np.nan)
    mean = float(np.nanmean(values))
    sd = float(np.nanstd(values, ddof=1)) if values.shape[0] > 1 else np.nan
    return mean, sd


def summarize(records: list[SimRecord], labels: tuple[str, ...],
              config: SimConfig) -> list[ConditionSummary]:
    """Per-condition convergence/admissibility proportions (with binomial
    standard errors) and parameter summaries for the converged and
    nonconverged subsets separately."""
    out = []
    for cond in config.conditions():
        recs = [r for r in records if r.n == cond.n and r.delta == cond.delta]
        if not recs:
            continue
        nsim = len(recs)
        conv = np.array([r.converged for r in recs], dtype=bool)
        adm = np.array([r.admissible for r in recs], dtype=bool)
        thetas = np.array([r.theta for r in recs])
        p_conv = float(np.mean(conv))
        p_adm = float(np.mean(adm))
        params = {}
        for j, lab in enumerate(labels):
            mean_all, sd_all = _mean_sd(thetas[:, j])
            mean_c, sd_c = _mean_sd(thetas[conv, j])
            mean_nc, sd_nc = _mean_sd(thetas[~conv, j])
            params[lab] = ParamStats(mean_all, sd_all, mean_c, sd_c,
                                     mean_nc, sd_nc)
        out.append(ConditionSummary(
            n=cond.n, delta=cond.delta, nsim=nsim,
            prop_converged=p_conv,
            se_converged=float(np.sqrt(p_conv * (1 - p_conv) / nsim)),
            prop_admissible=p_adm,
            se_admissible=float(np.sqrt(p_adm * (1 - p_adm) / nsim)),
            params=params))
    return out


def default_workers() -> int:
    env = os.environ.get("LATENT_RANK_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(config: SimConfig, workers: int | None = None) -> ExperimentResult:
    """Full factorial run; replicates execute independently (optionally in a
    process pool) and are assembled in (condition, replicate) order."""
    labels = experiment_labels(config)
    conditions = config.conditions()
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(conditions) == 1:
        blocks = [_run_condition((config, c)) for c in conditions]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run_condition,
                                   [(config, c) for c in conditions]))
    records = [rec for block in blocks for rec in block]
    return ExperimentResult(config=config, labels=labels, records=records,
                            summaries=summarize(records, labels, config))


@dataclass(frozen=True)
class ShapiroSummary:
    """Distribution summary for the third residual variance estimate."""

    n: int
    nsim: int
    fraction_negative: float
    hist_edges: tuple[float, ...]
    hist_counts: tuple[int, ...]
    se_available_fraction: float
    param_means: dict[str, float]
    param_sds: dict[str, float]


def _se_available(spec: ModelSpec, theta: Theta, n: int) -> bool:
    lam, phi, psi = build_matrices(spec, theta)[0]
    sigma = lam @ phi @ lam.T + psi
    try:
        weight = WeightMatrix((ml_weight(sigma),))
    except NonPositiveDefiniteError:
        return False
    report = fisher_information(analytic_jacobian(spec, theta), weight, (n,),
                                labels=spec.free_labels)
    return report.available


def shapiro_experiment(config: SimConfig,
                       workers: int | None = None) -> tuple[ExperimentResult, ShapiroSummary]:
    """Run the three-indicator experiment and summarize the estimate of the
    residual variance whose true value is zero."""
    if config.experiment != SHAPIRO:
        raise ValueError("config must be tagged for the shapiro experiment")
    result = run_experiment(config, workers=workers)
    spec = _experiment_spec(SHAPIRO, config.delta_grid[0])
    j = result.labels.index("psi3")
    psi3 = np.array([r.theta[j] for r in result.records])
    good = psi3[~np.isnan(psi3)]
    counts, edges = np.histogram(good, bins=30)
    se_avail = [
        _se_available(spec, Theta(np.array(r.theta), result.labels), r.n)
        for r in result.records if not any(np.isnan(r.theta))
    ]
    thetas = np.array([r.theta for r in result.records])
    summary = ShapiroSummary(
        n=result.records[0].n if result.records else 0,
        nsim=len(result.records),
        fraction_negative=float(np.mean(good < 0)) if good.size else np.nan,
        hist_edges=tuple(edges.tolist()),
        hist_counts=tuple(int(c) for c in counts),
        se_available_fraction=float(np.mean(se_avail)) if se_avail else np.nan,
        param_means={lab: float(np.nanmean(thetas[:, k]))
                     for k, lab in enumerate(result.labels)},
        param_sds={lab: float(np.nanstd(thetas[:, k], ddof=1))
                   for k, lab in enumerate(result.labels)},
    )
    return result, summary

import numpy as np
import pytest

import latentrank as lr
from latentrank import presets
from latentrank.estimation import FitConfig
from latentrank.simulation import (
    SBMTMM,
    SHAPIRO,
    SimCondition,
    SimConfig,
    mvn_sample,
    run_experiment,
    run_replicate,
    sbmtmm_population,
    shapiro_experiment,
    shapiro_population,
    split_ballot_moments,
    summarize,
)

FAST_FIT = FitConfig(max_iter=200)


def test_mvn_sample_deterministic():
    pop = sbmtmm_population(0.2)
    a = mvn_sample(pop.sigma, 100, np.random.default_rng(5))
    b = mvn_sample(pop.sigma, 100, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_mvn_sample_identity_off_diagonal_vanishes():
    rng = np.random.default_rng(11)
    x = mvn_sample(np.eye(2), 200_000, rng)
    cov = np.cov(x.T)
    assert abs(cov[0, 1]) < 0.01


def test_mvn_sample_matches_population_covariance():
    pop = sbmtmm_population(0.2)
    rng = np.random.default_rng(17)
    x = mvn_sample(pop.sigma, 1_000_000, rng)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / x.shape[0]
    assert np.max(np.abs(cov - pop.sigma)) < 0.02


def test_mvn_sample_rejects_non_pd():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(lr.NonPositiveDefiniteError):
        mvn_sample(bad, 10, np.random.default_rng(0))


@pytest.mark.parametrize("delta", [0.0, 0.01, 0.05, 0.1, 0.2, 0.3])
def test_population_pd_across_grid(delta):
    pop = sbmtmm_population(delta)
    assert np.linalg.eigvalsh(pop.sigma)[0] > 0


def test_shapiro_population_matches_frozen_sigma():
    pop = shapiro_population()
    expected = np.array([[2.0, 0.4, 0.7],
                         [0.4, 0.25, 0.28],
                         [0.7, 0.28, 0.49]])
    assert np.allclose(pop.sigma, expected)


def test_split_ballot_shapes_and_sizes():
    data = np.arange(900, dtype=float).reshape(100, 9)
    rng = np.random.default_rng(2)
    data = data + rng.normal(size=data.shape)
    moments = split_ballot_moments(data)
    assert len(moments.covs) == 2
    assert all(c.shape == (6, 6) for c in moments.covs)
    assert moments.ns == (50, 50)


def test_split_ballot_rejects_odd_n_and_bad_width():
    with pytest.raises(ValueError, match="even"):
        split_ballot_moments(np.zeros((7, 9)))
    with pytest.raises(ValueError, match="9"):
        split_ballot_moments(np.zeros((10, 8)))


def test_split_ballot_group_covariances_approach_submatrices():
    pop = sbmtmm_population(0.2)
    rng = np.random.default_rng(3)
    data = mvn_sample(pop.sigma, 1_000_000, rng)
    moments = split_ballot_moments(data)
    keep1 = [0, 1, 3, 4, 6, 7]   # methods 1 and 2
    keep2 = [0, 2, 3, 5, 6, 8]   # methods 1 and 3
    sub1 = pop.sigma[np.ix_(keep1, keep1)]
    sub2 = pop.sigma[np.ix_(keep2, keep2)]
    assert np.max(np.abs(moments.covs[0] - sub1)) < 0.03
    assert np.max(np.abs(moments.covs[1] - sub2)) < 0.03


def test_split_ballot_group_variable_orders_match_template():
    # group 1 drops method-3 columns, group 2 drops method-2 columns, and the
    # remaining order agrees with the preset's per-group observed order
    spec = presets.sbmtmm_spec()
    assert spec.groups[0].observed == ("y11", "y12", "y21", "y22", "y31", "y32")
    assert spec.groups[1].observed == ("y11", "y13", "y21", "y23", "y31", "y33")


def test_run_replicate_deterministic():
    config = SimConfig(experiment=SBMTMM, n_grid=(100,), delta_grid=(0.2,),
                       nsim=1, seed=99, fit=FAST_FIT)
    cond = config.conditions()[0]
    a = run_replicate(cond, 0, config)
    b = run_replicate(cond, 0, config)
    assert a == b


def test_run_replicate_records_structure():
    config = SimConfig(experiment=SBMTMM, n_grid=(1000,), delta_grid=(0.3,),
                       nsim=1, seed=7, fit=FAST_FIT)
    rec = run_replicate(config.conditions()[0], 0, config)
    assert rec.n == 1000 and rec.delta == 0.3 and rec.rep == 0
    assert len(rec.theta) == 24
    assert rec.stop_reason in ("gradient_tol", "max_iter",
                               "singular_information", "line_failure")


def test_run_experiment_single_condition_single_rep():
    config = SimConfig(experiment=SBMTMM, n_grid=(200,), delta_grid=(0.3,),
                       nsim=1, seed=5, fit=FAST_FIT)
    result = run_experiment(config, workers=1)
    assert len(result.records) == 1
    assert len(result.summaries) == 1
    assert result.summaries[0].nsim == 1


def test_run_experiment_parallel_matches_serial():
    config = SimConfig(experiment=SBMTMM, n_grid=(100, 200),
                       delta_grid=(0.1, 0.3), nsim=3, seed=31, fit=FAST_FIT)
    serial = run_experiment(config, workers=1)
    parallel = run_experiment(config, workers=3)
    assert serial.records == parallel.records


def test_summaries_have_converged_and_nonconverged_stats():
    config = SimConfig(experiment=SBMTMM, n_grid=(100,), delta_grid=(0.0,),
                       nsim=6, seed=13, fit=FAST_FIT)
    result = run_experiment(config, workers=1)
    s = result.summaries[0]
    assert 0.0 <= s.prop_converged <= 1.0
    assert 0.0 <= s.prop_admissible <= 1.0
    st = s.params["rho12"]
    assert np.isfinite(st.mean_all)
    expected_se = np.sqrt(s.prop_converged * (1 - s.prop_converged) / s.nsim)
    assert s.se_converged == pytest.approx(expected_se)


def test_shapiro_experiment_small_run():
    config = SimConfig(experiment=SHAPIRO, n_grid=(400,), delta_grid=(0.0,),
                       nsim=4, seed=21, fit=FAST_FIT)
    result, summary = shapiro_experiment(config, workers=1)
    assert len(result.records) == 4
    assert summary.n == 400
    assert 0.0 <= summary.fraction_negative <= 1.0
    assert sum(summary.hist_counts) == sum(
        1 for r in result.records if not any(np.isnan(r.theta)))
    assert "psi3" in summary.param_means


def test_shapiro_experiment_rejects_wrong_tag():
    config = SimConfig(experiment=SBMTMM, n_grid=(100,), delta_grid=(0.0,),
                       nsim=1, seed=1, fit=FAST_FIT)
    with pytest.raises(ValueError):
        shapiro_experiment(config)


def test_sim_condition_validation():
    with pytest.raises(ValueError, match="even"):
        SimCondition(n=51, delta=0.0, index=0)
    with pytest.raises(ValueError, match="delta"):
        SimCondition(n=50, delta=-0.1, index=0)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(experiment="other")
    with pytest.raises(ValueError):
        SimConfig(n_grid=())
    with pytest.raises(ValueError):
        SimConfig(nsim=0)


def test_condition_enumeration_order():
    config = SimConfig(n_grid=(50, 100), delta_grid=(0.0, 0.3), nsim=1)
    conds = config.conditions()
    assert [(c.n, c.delta, c.index) for c in conds] == [
        (50, 0.0, 0), (50, 0.3, 1), (100, 0.0, 2), (100, 0.3, 3)]

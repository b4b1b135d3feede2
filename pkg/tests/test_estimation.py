import numpy as np
import pytest

import latentrank as lr
from latentrank import presets
from latentrank.estimation import (
    FitConfig,
    GRADIENT_TOL,
    NonPositiveDefiniteError,
    SINGULAR_INFORMATION,
    WeightMatrix,
    identity_weight,
)


def population_moments(delta, n=100_000):
    spec = presets.sbmtmm_spec(delta)
    theta0 = presets.sbmtmm_population_theta(delta, spec)
    covs = tuple(lam @ phi @ lam.T + psi
                 for lam, phi, psi in lr.build_matrices(spec, theta0))
    return spec, theta0, lr.SampleMoments(covs, (n // 2, n // 2))


def shapiro_population_cov():
    lam = np.array(presets.SHAPIRO_LAMBDAS)
    return np.outer(lam, lam) + np.diag(presets.SHAPIRO_PSI_VARS)


# -- loss ----------------------------------------------------------------


def test_loss_zero_at_population():
    spec, theta0, moments = population_moments(0.2)
    f = lr.wls_loss(spec, theta0, moments.to_moment_vector(),
                    identity_weight(spec), moments.group_weights())
    assert f == pytest.approx(0.0, abs=1e-24)


def test_loss_identity_weight_is_squared_norm():
    spec = presets.shapiro_spec()
    theta = presets.shapiro_population_theta(spec)
    s = lr.implied_sigma(spec, theta)
    bumped = lr.MomentVector(s.values + 0.1, s.group_sizes)
    f = lr.wls_loss(spec, theta, bumped, identity_weight(spec), [1.0])
    assert f == pytest.approx(6 * 0.1 ** 2)


def test_loss_matches_hand_expanded_quadratic_form():
    spec = presets.shapiro_squared_spec()
    theta0 = presets.shapiro_population_theta(spec, squared=True)
    s = lr.implied_sigma(spec, theta0)
    perturbed = theta0.replace({"l1": theta0.as_dict()["l1"] + 0.1})
    v_block = lr.ml_weight(shapiro_population_cov())
    weight = WeightMatrix((v_block,))
    f = lr.wls_loss(spec, perturbed, s, weight, [1.0])
    # independent evaluation: explicit double loop over the quadratic form
    resid = s.values - lr.implied_sigma(spec, perturbed).values
    expected = sum(resid[i] * v_block[i, j] * resid[j]
                   for i in range(6) for j in range(6))
    assert f == pytest.approx(expected, rel=1e-12)
    assert f > 0


def test_loss_positive_whenever_residual_nonzero():
    spec = presets.shapiro_spec()
    rng = np.random.default_rng(5)
    theta = presets.shapiro_population_theta(spec)
    s = lr.implied_sigma(spec, theta)
    weight = WeightMatrix((lr.ml_weight(shapiro_population_cov()),))
    for _ in range(20):
        bump = rng.normal(0, 0.05, 6)
        if np.all(bump == 0):
            continue
        moved = lr.MomentVector(s.values + bump, s.group_sizes)
        assert lr.wls_loss(spec, theta, moved, weight, [1.0]) > 0


# -- ml weight -----------------------------------------------------------


def test_ml_weight_identity_2x2():
    assert np.allclose(lr.ml_weight(np.eye(2)), np.diag([0.5, 1.0, 0.5]))


def test_ml_weight_identity_1x1():
    assert np.allclose(lr.ml_weight(np.eye(1)), [[0.5]])


def test_ml_weight_scaling():
    sigma = shapiro_population_cov()
    v1 = lr.ml_weight(sigma)
    v2 = lr.ml_weight(3.0 * sigma)
    assert np.allclose(v2, v1 / 9.0)


def test_ml_weight_rejects_non_pd():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])   # eigenvalues 3, -1
    with pytest.raises(NonPositiveDefiniteError) as err:
        lr.ml_weight(bad)
    assert err.value.min_eigenvalue == pytest.approx(-1.0)
    assert "-1" in str(err.value)


# -- gradient ------------------------------------------------------------


def test_gradient_zero_at_population():
    spec, theta0, moments = population_moments(0.1)
    weight = lr.sample_weight(moments)
    g = lr.gradient(spec, theta0, moments.to_moment_vector(), weight,
                    moments.group_weights())
    assert np.max(np.abs(g)) < 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(77)
    from test_identification import random_cfa_spec, random_theta
    for k in range(50):
        spec = random_cfa_spec(rng, two_groups=(k % 4 == 0))
        theta = random_theta(spec, rng)
        target = random_theta(spec, rng)
        s = lr.implied_sigma(spec, target)
        weight = identity_weight(spec)
        w = np.ones(spec.n_groups) / spec.n_groups
        g = lr.gradient(spec, theta, s, weight, w)
        h = 1e-6
        for j in rng.choice(spec.n_free, size=min(4, spec.n_free),
                            replace=False):
            up = theta.values.copy()
            up[j] += h
            dn = theta.values.copy()
            dn[j] -= h
            fd = (lr.wls_loss(spec, lr.Theta(up, theta.labels), s, weight, w)
                  - lr.wls_loss(spec, lr.Theta(dn, theta.labels), s, weight, w)
                  ) / (2 * h)
            scale = max(1.0, abs(fd))
            assert abs(g[j] - fd) / scale < 1e-6


def test_gradient_component_vanishes_at_zero_residual_loading():
    # with the squared parameterization at p3 = 0, the p3 Jacobian column is
    # 2*p3 = 0, so that gradient component is zero for any data
    spec = presets.shapiro_squared_spec()
    theta = presets.shapiro_squared_theta(0.0, spec)
    rng = np.random.default_rng(3)
    sigma = shapiro_population_cov() + 0.05 * np.diag(rng.uniform(1, 2, 3))
    moments = lr.SampleMoments((sigma,), (1000,))
    weight = lr.sample_weight(moments)
    g = lr.gradient(spec, theta, moments.to_moment_vector(), weight, [1.0])
    assert g[spec.free_labels.index("p3")] == 0.0
    assert np.max(np.abs(g)) > 0


# -- admissibility -------------------------------------------------------


def test_admissibility_negative_residual_variance():
    spec = presets.shapiro_spec()
    theta = presets.shapiro_population_theta(spec).replace({"psi3": -0.1})
    ok, issues = lr.check_admissibility(spec, theta)
    assert not ok
    assert any("y3" in msg for msg in issues)


def test_admissibility_correlation_above_one():
    spec = presets.sbmtmm_spec()
    theta = presets.sbmtmm_population_theta(0.0, spec).replace({"rho12": 1.2})
    ok, issues = lr.check_admissibility(spec, theta)
    assert not ok
    assert any("factor covariance" in msg for msg in issues)


@pytest.mark.parametrize("delta", [0.0, 0.01, 0.05, 0.1, 0.2, 0.3])
def test_admissibility_population_models(delta):
    spec = presets.sbmtmm_spec(delta)
    ok, issues = lr.check_admissibility(
        spec, presets.sbmtmm_population_theta(delta, spec))
    assert ok and issues == ()


# -- fit -----------------------------------------------------------------


def test_fit_population_recovery_fisher():
    spec, theta0, moments = population_moments(0.2)
    result = lr.fit(spec, moments, FitConfig())
    assert result.converged and result.stop_reason == GRADIENT_TOL
    assert np.max(np.abs(result.theta_hat.values - theta0.values)) < 1e-6
    assert result.admissible


def test_fit_singular_information_at_deficient_point():
    spec, theta0, moments = population_moments(0.0)
    result = lr.fit(spec, moments, FitConfig(), start=theta0)
    assert result.stop_reason == SINGULAR_INFORMATION
    assert not result.converged
    assert result.iterations == 0
    assert np.array_equal(result.theta_hat.values, theta0.values)


def test_fit_shapiro_squared_population_recovery():
    spec = presets.shapiro_squared_spec()
    theta0 = presets.shapiro_population_theta(spec, squared=True)
    sigma = shapiro_population_cov()
    moments = lr.SampleMoments((sigma,), (100_000,))
    start = spec.theta_from({"l1": 0.9, "l2": 0.5, "l3": 0.6,
                             "p1": 0.5, "p2": 0.5, "p3": 0.5})
    result = lr.fit(spec, moments, FitConfig(), start=start)
    est = result.theta_hat.as_dict()
    for lab in ("l1", "l2", "l3", "p1", "p2"):
        assert abs(est[lab] - theta0.as_dict()[lab]) < 1e-4
    assert result.loss < 1e-12


def test_fit_descent_property():
    # the loss under the final (sample) weights never goes up between
    # accepted iterates; spot-check by comparing start and end
    spec, theta0, moments = population_moments(0.1)
    for optimizer in ("gd", "fisher", "newton"):
        config = FitConfig(optimizer=optimizer, weights="sample", max_iter=50,
                           gamma=0.3)
        result = lr.fit(spec, moments, config)
        weight = lr.sample_weight(moments)
        f_start = lr.wls_loss(spec, spec.start_theta(),
                              moments.to_moment_vector(), weight,
                              moments.group_weights())
        assert result.loss <= f_start


def test_fit_fisher_fixed_point():
    spec, theta0, moments = population_moments(0.2)
    result = lr.fit(spec, moments, FitConfig(), start=theta0)
    assert result.converged
    assert result.iterations == 0
    assert np.array_equal(result.theta_hat.values, theta0.values)


def test_fit_sample_and_iterative_reach_same_population_minimum():
    spec, theta0, moments = population_moments(0.2)
    for policy in ("sample", "iterative"):
        result = lr.fit(spec, moments, FitConfig(weights=policy))
        assert result.converged
        assert result.loss < 1e-12
        assert np.max(np.abs(result.theta_hat.values - theta0.values)) < 1e-6


def test_fit_rejects_wrong_group_count():
    spec = presets.shapiro_spec()
    moments = lr.SampleMoments((np.eye(3), np.eye(3)), (100, 100))
    with pytest.raises(ValueError, match="group"):
        lr.fit(spec, moments, FitConfig())


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(optimizer="bogus")
    with pytest.raises(ValueError):
        FitConfig(max_iter=0)
    with pytest.raises(ValueError):
        FitConfig(weights="nope")


def test_weight_matrix_requires_pd_blocks():
    with pytest.raises(NonPositiveDefiniteError):
        WeightMatrix((np.array([[1.0, 2.0], [2.0, 1.0]]),))


def test_weight_matrix_full_assembles_blocks():
    w = WeightMatrix((np.eye(2), 2 * np.eye(3)))
    full = w.full()
    assert full.shape == (5, 5)
    assert np.allclose(full[:2, :2], np.eye(2))
    assert np.allclose(full[2:, 2:], 2 * np.eye(3))
    assert np.all(full[:2, 2:] == 0)

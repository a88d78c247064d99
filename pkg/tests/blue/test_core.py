import logging

import numpy as np
import pytest

from src.blue.core import (
    assemble_psi,
    blue_point_estimate,
    blue_variance,
    extract_beta,
    group_factors,
)
from src.blue.errors import InfeasibleTarget, NumericalFailure
from src.blue.groups import ModelGroup, enumerate_groups, principal_submatrix
from src.family.model_family import family_moments
from src.family.moments import MomentData
from src.family.presets import toy_family
from src.family.sampler import draw_events, event_stream


def dense_psi(groups, C, m):
    L = C.shape[0]
    psi = np.zeros((L, L))
    for group, count in zip(groups, m):
        if count > 0:
            index = np.ix_(group.positions, group.positions)
            psi[index] += count * np.linalg.inv(principal_submatrix(C, group))
    return psi


def test_information_matches_dense_formula(cost, random_spd):
    system = enumerate_groups(3, None, cost)
    m = np.array([3.0, 1.0, 2.0, 4.0, 0.5, 1.5, 2.0])
    alpha = np.array([0.2, -0.5, 1.0])
    psi = dense_psi(system.groups, random_spd, m)

    np.testing.assert_allclose(assemble_psi(system, random_spd, m), psi, rtol=1e-10)
    expected = alpha @ np.linalg.solve(psi, alpha)
    info = group_factors(system, random_spd).information(m)
    assert info.variance(alpha) == pytest.approx(expected, rel=1e-10)
    assert blue_variance(psi, alpha) == pytest.approx(expected, rel=1e-10)
    np.testing.assert_allclose(info.matrix(), psi, rtol=1e-10)


def test_single_group_reduces_to_monte_carlo(cost, random_spd):
    system = enumerate_groups(3, 1, cost)
    m = np.array([0.0, 0.0, 5.0])
    alpha = np.array([0.0, 0.0, 1.0])
    info = group_factors(system, random_spd).information(m)
    assert info.variance(alpha) == pytest.approx(random_spd[2, 2] / 5.0, rel=1e-12)
    np.testing.assert_array_equal(info.covered, [2])


def test_uncovered_level_in_alpha_is_infeasible(cost, random_spd):
    system = enumerate_groups(3, 1, cost)
    info = group_factors(system, random_spd).information(np.array([0.0, 0.0, 5.0]))
    with pytest.raises(InfeasibleTarget):
        info.variance(np.array([1.0, 0.0, 1.0]))
    with pytest.raises(InfeasibleTarget):
        group_factors(system, random_spd).information(np.zeros(3))


def test_betas_form_an_unbiased_scheme(toy_moments, cost, unit_L):
    system = enumerate_groups(4, 2, cost)
    m = np.linspace(1.0, 2.0, len(system))
    betas = extract_beta(system, toy_moments, m, unit_L)

    np.testing.assert_allclose(betas.sum(axis=0), unit_L, atol=1e-10)
    for group, beta in zip(system.groups, betas):
        outside = np.delete(beta, group.positions)
        np.testing.assert_allclose(outside, 0.0, atol=1e-14)
    variance = np.sum(toy_moments.quad(betas) / m)
    info = group_factors(system, toy_moments).information(m)
    assert variance == pytest.approx(info.variance(unit_L), rel=1e-9)


def test_point_estimate_of_one_full_group(random_spd):
    groups = [ModelGroup.of(1, 2, 3)]
    samples = [np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]])]
    estimate = blue_point_estimate(groups, random_spd, samples, [0.0, 1.0, 0.0], m=[2])
    assert estimate == pytest.approx(3.0)


def test_point_estimate_uses_the_group_coefficients(random_spd):
    groups = [ModelGroup.of(1), ModelGroup.of(1, 2), ModelGroup.of(2, 3)]
    rng = np.random.default_rng(5)
    samples = [rng.standard_normal((4, 1)), rng.standard_normal((2, 2)), rng.standard_normal((3, 2))]
    alpha = np.array([0.0, 0.0, 1.0])
    m = np.array([4.0, 2.0, 3.0])

    betas = extract_beta(groups, random_spd, m, alpha)
    expected = sum(beta[g.positions] @ s.mean(axis=0) for g, beta, s in zip(groups, betas, samples))
    assert blue_point_estimate(groups, random_spd, samples, alpha) == pytest.approx(expected, rel=1e-10)


def test_point_estimate_checks_counts(random_spd):
    with pytest.raises(ValueError):
        blue_point_estimate([ModelGroup.of(1)], random_spd, [np.ones((2, 1))], [1.0, 0.0, 0.0], m=[3])


def test_singular_group_covariance_is_reported(cost):
    C = MomentData(mu=None, C=np.ones((2, 2)), factor=np.ones((2, 1)))
    system = enumerate_groups(2, None, cost)
    with pytest.raises(NumericalFailure, match="1,2"):
        group_factors(system, C)


def test_blue_variance_rejects_indefinite_psi():
    with pytest.raises(NumericalFailure):
        blue_variance(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 0.0])


def test_ill_conditioned_toy_family_stays_accurate(cost):
    moments = family_moments(toy_family(ell0=6.0))
    system = enumerate_groups(4, None, cost)
    alpha = np.array([0.0, 0.0, 0.0, 1.0])
    variance = group_factors(system, moments).information(np.ones(len(system))).variance(alpha)
    # {4} alone with one event already gives C_44
    assert 0 < variance <= moments.C[3, 3] * (1 + 1e-8)


def test_groups_without_samples_are_not_factored():
    # {1,2} is singular under a rank-one covariance but carries no samples
    C = MomentData(mu=None, C=np.ones((2, 2)), factor=np.ones((2, 1)))
    groups = [ModelGroup.of(1), ModelGroup.of(2), ModelGroup.of(1, 2)]
    betas = extract_beta(groups, C, [2, 3, 0], [0.0, 1.0])
    np.testing.assert_allclose(betas, [[0.0, 0.0], [0.0, 1.0], [0.0, 0.0]], atol=1e-15)

    samples = [np.array([[1.0], [2.0]]), np.array([[4.0], [5.0], [9.0]]), np.empty((0, 2))]
    assert blue_point_estimate(groups, C, samples, [0.0, 1.0]) == pytest.approx(6.0, rel=1e-14)


def test_ill_conditioned_groups_are_flagged(cost, caplog):
    system = enumerate_groups(4, None, cost)
    with caplog.at_level(logging.WARNING, logger="src.blue.core"):
        factors = group_factors(system, family_moments(toy_family(ell0=6.0)))
    assert ModelGroup.of(1, 2, 3, 4) in factors.flagged
    assert any("ill-conditioned" in record.getMessage() for record in caplog.records)

    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="src.blue.core"):
        assert group_factors(system, family_moments(toy_family())).flagged == []
    assert not caplog.records


def test_point_estimate_is_unbiased():
    family = toy_family(mean=[1.0, 1.0, 1.0, 1.0])
    moments = family_moments(family)
    groups = [ModelGroup.of(1), ModelGroup.of(1, 2), ModelGroup.of(2, 3), ModelGroup.of(3, 4)]
    m = [4, 2, 2, 1]
    alpha = np.array([0.0, 0.0, 0.0, 1.0])

    replications = 2000
    estimates = np.empty(replications)
    for r in range(replications):
        samples = [
            draw_events(family, event_stream(13, r, k), count)[1][:, group.positions]
            for k, (group, count) in enumerate(zip(groups, m))
        ]
        estimates[r] = blue_point_estimate(groups, moments, samples, alpha, m=m)

    variance = group_factors(groups, moments).information(m).variance(alpha)
    stderr = np.sqrt(variance / replications)
    assert abs(estimates.mean() - moments.mu[3]) < 4 * stderr
    assert estimates.var(ddof=1) == pytest.approx(variance, rel=0.15)

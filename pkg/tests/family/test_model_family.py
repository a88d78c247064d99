import numpy as np
import pytest

from src.family.model_family import ExpansionFamily, RateVector, expansion_family, family_moments
from src.family.presets import q_preset, toy_exp_q, toy_family
from src.family.sampler import PATH_BLOCK, sample_paths
from src.study.analysis import fit_rate


def test_variance_of_first_model_with_identity_q():
    family = expansion_family(4, (0, 1, 2, 3), 2, np.eye(4), noise_scale=0.1, noise_rate=3)
    moments = family_moments(family)
    assert moments.C[0, 0] == pytest.approx(1.32828125, rel=1e-14)


def test_covariance_matches_closed_form(toy):
    moments = family_moments(toy)
    W = toy.weights()
    expected = W @ toy.Q @ W.T + np.diag(toy.noise_sd() ** 2)
    np.testing.assert_allclose(moments.C, expected, rtol=1e-13)
    np.testing.assert_allclose(moments.factor @ moments.factor.T, moments.C, rtol=1e-13)


def test_mean_zero_family_has_no_bias(toy, toy_moments):
    assert not toy.has_bias
    np.testing.assert_array_equal(toy_moments.mu, np.zeros(4))
    assert toy_moments.truth_mean == 0.0


def test_synthetic_means(synthetic):
    moments = family_moments(synthetic)
    levels = np.arange(1, 9)
    np.testing.assert_allclose(moments.mu, 1.0 + 4.0 ** -levels + 16.0 ** -levels, rtol=1e-15)
    assert moments.truth_mean == 1.0
    assert synthetic.has_bias


def test_ell0_shifts_levels(toy):
    shifted = toy.with_ell0(2.0)
    np.testing.assert_allclose(shifted.weights()[0], toy.with_levels(3).weights()[2])


def test_toy_exp_q():
    Q = toy_exp_q(3)
    assert Q[0, 2] == pytest.approx(np.exp(-2.0))
    np.testing.assert_array_equal(np.diag(Q), np.ones(3))
    with pytest.raises(ValueError):
        q_preset("unknown", 3)


@pytest.mark.parametrize("gammas, gamma_cost", [
    ((1, 2), 2),
    ((0, 2, 2), 2),
    ((0, 3, 2), 2),
    ((0, 1), 0),
])
def test_invalid_rates(gammas, gamma_cost):
    with pytest.raises(ValueError):
        RateVector(gammas, gamma_cost)


def test_family_rejects_indefinite_q():
    with pytest.raises(ValueError):
        ExpansionFamily(L=3, rates=RateVector((0, 1), 1), Q=[[1.0, 2.0], [2.0, 1.0]])


def test_family_rejects_too_many_expansion_terms():
    with pytest.raises(ValueError):
        ExpansionFamily(L=3, rates=RateVector((0, 1), 1), Q=np.eye(3))


def test_paths_are_reproducible(toy):
    first = sample_paths(toy, 7, 100)
    np.testing.assert_array_equal(first, sample_paths(toy, 7, 100))
    assert not np.array_equal(first, sample_paths(toy, 8, 100))


def test_path_windows_cross_blocks(toy):
    whole = sample_paths(toy, 3, PATH_BLOCK + 20)
    window = sample_paths(toy, 3, 30, start=PATH_BLOCK - 10)
    np.testing.assert_array_equal(window, whole[PATH_BLOCK - 10:PATH_BLOCK + 20])


def test_paths_have_the_family_covariance(toy, toy_moments):
    paths = sample_paths(toy, 1, 100_000)
    np.testing.assert_allclose(np.cov(paths[:, 1:].T), toy_moments.C, atol=0.03)
    np.testing.assert_allclose(np.var(paths[:, 0]), toy.Q[0, 0], atol=0.03)


def test_sample_paths_rejects_empty_request(toy):
    with pytest.raises(ValueError):
        sample_paths(toy, 0, 0)


def test_level_differences_decay_at_twice_the_second_rate():
    C = family_moments(toy_family(L=10)).C
    points = [(k, np.log2(C[k - 1, k - 1] + C[k - 2, k - 2] - 2 * C[k - 1, k - 2])) for k in range(4, 11)]
    assert fit_rate(points).slope == pytest.approx(-2.0, rel=0.1)

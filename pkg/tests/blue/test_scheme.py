import numpy as np
import pytest

from src.blue.extrapolation import mc_scheme, mlmc_scheme
from src.blue.groups import ModelGroup
from src.blue.scheme import EstimatorScheme, check_unbiased, group_variances, scheme_cost, scheme_variance


def test_mlmc_variance(toy_moments):
    scheme = mlmc_scheme(4, m=[4.0, 3.0, 2.0, 1.0])
    C = toy_moments.C
    expected = C[0, 0] / 4.0
    for k, m in zip(range(1, 4), (3.0, 2.0, 1.0)):
        expected += (C[k, k] - 2 * C[k, k - 1] + C[k - 1, k - 1]) / m
    assert scheme_variance(scheme, toy_moments) == pytest.approx(expected, rel=1e-12)


def test_mlmc_cost(cost):
    assert scheme_cost(mlmc_scheme(4), cost) == pytest.approx(1 + 5 + 20 + 80)


def test_unbiasedness_of_standard_schemes():
    assert check_unbiased(mlmc_scheme(5)).passed
    check = check_unbiased(mc_scheme(3, 2.0, alpha=[0.5, 0.0, 0.5]))
    assert check.passed
    assert check.residual == 0.0


def test_violations_are_listed():
    scheme = EstimatorScheme(
        name="broken",
        groups=(ModelGroup.of(1), ModelGroup.of(2)),
        betas=[[1.0, 0.5], [0.0, 0.25]],
        m=[1.0, 0.0],
        alpha=[1.0, 1.0],
    )
    check = check_unbiased(scheme)
    assert not check.passed
    assert len(check.violations) == 3


def test_variance_needs_samples_for_used_groups(toy_moments):
    scheme = mlmc_scheme(4, m=[1.0, 0.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="no samples"):
        scheme_variance(scheme, toy_moments)


def test_scheme_truncates_larger_moments(toy_moments):
    scheme = mlmc_scheme(2)
    assert scheme_variance(scheme, toy_moments) == pytest.approx(
        scheme_variance(scheme, toy_moments.truncate(2))
    )


def test_group_variances(toy_moments):
    sigma2 = group_variances(mc_scheme(4, 1.0), toy_moments)
    np.testing.assert_allclose(sigma2, [toy_moments.C[3, 3]])


def test_scheme_validation():
    with pytest.raises(ValueError):
        EstimatorScheme("x", (ModelGroup.of(1),), [[1.0, 0.0]], [1.0, 1.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        EstimatorScheme("x", (ModelGroup.of(3),), [[0.0, 1.0]], [1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        EstimatorScheme("x", (ModelGroup.of(1),), [[1.0]], [-1.0], [1.0])

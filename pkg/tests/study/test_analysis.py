import math

import numpy as np
import pytest

from src.blue.errors import InfeasibleTarget
from src.blue.extrapolation import re_bias, re_vectors
from src.family.model_family import family_moments
from src.family.presets import TOY_RATES, synthetic_cost, synthetic_family, toy_cost, toy_family
from src.study.analysis import (
    ABOVE,
    BELOW,
    EQUAL,
    coefficient_distance,
    complexity_table,
    convergence_point,
    convergence_slopes,
    convergence_study,
    cost_sweep,
    coupling_variance_rate,
    fit_rate,
    level_driver,
    mse_target_driver,
    predicted_cost_bound,
    variance_gap,
)
from src.study.estimators import EstimatorSpec


# (estimator, bias target) -> (first, second, log power) exponents
TABLE_GAMMA_COST_2 = {
    ("MC", "e_L"): (-1.0, -3.0, 0),
    ("MLMC", "e_L"): (-1.0, -2.0, 0),
    ("MFMC", "e_L"): (-1.0, -2.0, 0),
    ("SAOB,2", "e_L"): (-1.0, -2.0, 0),
    ("SAOB,3", "e_L"): (-1.0, -2.0, 0),
    ("SAOB", "e_L"): (-1.0, -2.0, 0),
    ("MC", "v_L3"): (-0.5, -2.5, 0),
    ("RE,2", "v_L3"): (-0.5, -2.0, 0),
    ("RE,3", "v_L3"): (-0.5, -2.0, 0),
    ("SAOB,2", "v_L3"): (-0.5, -2.0, 0),
    ("SAOB,3", "v_L3"): (-0.5, -2.0, 0),
    ("SAOB", "v_L3"): (-0.5, -2.0, 0),
}

TABLE_GAMMA_COST_6 = {
    ("MC", "e_L"): (-3.0, -5.0, 0),
    ("MLMC", "e_L"): (-3.0, -3.0, 0),
    ("MFMC", "e_L"): (-3.0, -3.0, 0),
    ("SAOB,2", "e_L"): (-3.0, -3.0, 0),
    ("SAOB,3", "e_L"): (-3.0, -2.0, 0),
    ("SAOB", "e_L"): (-3.0, -2.0, 0),
    ("MC", "v_L3"): (-1.5, -3.5, 0),
    ("RE,2", "v_L3"): (-1.5, -2.5, 0),
    ("RE,3", "v_L3"): (-1.5, -2.0, 0),
    ("SAOB,2", "v_L3"): (-1.5, -2.5, 0),
    ("SAOB,3", "v_L3"): (-1.5, -2.0, 0),
    ("SAOB", "v_L3"): (-1.5, -2.0, 0),
}


def test_monte_carlo_cost_bound():
    prediction = predicted_cost_bound(2.0, 0.0, 2.0)
    assert prediction.branch == ABOVE
    assert (prediction.first_exponent, prediction.second_exponent) == (-1.0, -3.0)
    assert prediction.value(0.1) == pytest.approx(10.0 + 1000.0)


def test_cost_bound_branches():
    assert predicted_cost_bound(2.0, 4.0, 2.0).branch == BELOW
    equal = predicted_cost_bound(2.0, 4.0, 4.0)
    assert equal.branch == EQUAL
    assert equal.log_power == 2
    assert equal.value(0.5) == pytest.approx(0.5 ** -2 + 0.5 ** -2 * math.log(0.5) ** 2)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)])
def test_cost_bound_rejects_bad_rates(args):
    with pytest.raises(ValueError):
        predicted_cost_bound(*args)
    with pytest.raises(ValueError):
        predicted_cost_bound(1.0, 1.0, 1.0, eps=1.5)


def test_coupling_variance_rate():
    gammas = (0.0, 2.0, 4.0)
    assert [coupling_variance_rate(q, gammas) for q in (1, 2, 3, 4, None)] == [0.0, 4.0, 8.0, 8.0, 8.0]
    with pytest.raises(ValueError):
        coupling_variance_rate(0, gammas)


@pytest.mark.parametrize("gamma_cost, expected", [(2.0, TABLE_GAMMA_COST_2), (6.0, TABLE_GAMMA_COST_6)])
def test_complexity_table(gamma_cost, expected):
    rows = complexity_table(gamma_cost)
    assert len(rows) == 12
    for row in rows:
        p = row.prediction
        assert (p.first_exponent, p.second_exponent, p.log_power) == expected[(row.estimator, row.bias_target)]


def test_fit_rate():
    fit = fit_rate([(0.0, 1.0), (1.0, -1.0), (2.0, -3.0), (3.0, -5.0)])
    assert fit.slope == pytest.approx(-2.0)
    assert fit.intercept == pytest.approx(1.0)
    assert fit.residual == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate([(0.0, 1.0), (1.0, 2.0)])
    with pytest.raises(ValueError):
        fit_rate([(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)])


def test_mse_target_picks_the_coarsest_accurate_level():
    family, cost = synthetic_family(), synthetic_cost()
    eps = 1e-3
    record = mse_target_driver(family, cost, EstimatorSpec("mlmc"), eps)
    assert record.bias_sq <= eps ** 2 / 2
    assert record.variance == pytest.approx(eps ** 2 / 2, rel=1e-8)
    assert record.mse <= eps ** 2 * (1 + 1e-8)
    coarser = synthetic_family(L=record.L - 1)
    bias = family_bias(coarser)
    assert bias ** 2 > eps ** 2 / 2
    assert record.cost_rounded >= record.cost_continuous


def family_bias(family):
    moments = family_moments(family)
    return abs(moments.mu[-1] - moments.truth_mean)


def test_unbiased_family_uses_all_levels():
    record = mse_target_driver(toy_family(), toy_cost(), EstimatorSpec("saob", coupling=2), 0.1)
    assert record.L == 4
    assert record.bias_sq == 0.0
    assert record.variance == pytest.approx(0.01, rel=1e-8)


def test_unreachable_accuracy():
    with pytest.raises(InfeasibleTarget):
        mse_target_driver(synthetic_family(L=3), synthetic_cost(), EstimatorSpec("mlmc"), 1e-8)


def test_level_driver_balances_bias_and_variance():
    record = level_driver(synthetic_family(L=4), synthetic_cost(), EstimatorSpec("re", coupling=3), 4)
    assert record.variance == pytest.approx(record.bias_sq, rel=1e-8)
    assert record.eps == pytest.approx(math.sqrt(2 * record.bias_sq))
    with pytest.raises(InfeasibleTarget):
        level_driver(toy_family(), toy_cost(), EstimatorSpec("mlmc"), 4)


def test_single_point_sweep_has_no_slope():
    result = cost_sweep(synthetic_family(), synthetic_cost(), [EstimatorSpec("mlmc")], eps_grid=[1e-3])
    assert len(result.records) == 1
    assert result.slopes == []
    with pytest.raises(ValueError):
        cost_sweep(synthetic_family(), synthetic_cost(), [EstimatorSpec("mlmc")])


def test_sweep_is_independent_of_threads():
    specs = [EstimatorSpec("mlmc"), EstimatorSpec("re", coupling=3)]
    grid = [1e-2, 3e-3, 1e-3]
    serial = cost_sweep(synthetic_family(), synthetic_cost(), specs, eps_grid=grid)
    threaded = cost_sweep(synthetic_family(), synthetic_cost(), specs, eps_grid=grid, threads=3)
    assert serial.records == threaded.records
    assert [s.estimator for s in serial.slopes] == ["mlmc", "mlmc+ceil", "re3", "re3+ceil"]


@pytest.mark.slow
def test_sweep_slopes_follow_the_cost_bounds():
    specs = [EstimatorSpec("mlmc"), EstimatorSpec("saob")]
    result = cost_sweep(synthetic_family(), synthetic_cost(6.0), specs, levels=range(4, 9), threads=2)
    slopes = {s.estimator: s.slope for s in result.slopes}
    assert slopes["mlmc"] == pytest.approx(-3.0, abs=0.3)
    assert slopes["saob"] == pytest.approx(-2.0, abs=0.3)
    assert slopes["saob+ceil"] == pytest.approx(-3.0, abs=0.3)


def test_convergence_point_at_equal_budget():
    point = convergence_point(toy_family(), toy_cost(), 3, 100.0)
    assert point.q == 3
    assert point.var_saob <= point.var_re * (1 + 1e-8)
    assert point.e == pytest.approx((point.var_re - point.var_saob) / point.var_saob)
    assert point.r > 0
    with pytest.raises(ValueError):
        convergence_point(toy_family(), toy_cost(), 1, 100.0)


def test_convergence_study_order():
    points = convergence_study(toy_family(), toy_cost(), [2, 3], [0.0, 1.0], 100.0, threads=2)
    assert [(p.ell0, p.q) for p in points] == [(0.0, 2), (0.0, 3), (1.0, 2), (1.0, 3)]


@pytest.mark.slow
def test_blue_converges_to_richardson_extrapolation():
    points = convergence_study(toy_family(), toy_cost(), [2, 3, 4], list(range(7)), 100.0)
    assert len(points) == 21
    for q in (2, 3, 4):
        own = {p.ell0: p for p in points if p.q == q}
        assert own[6].r < 0.1 * own[0].r
        assert own[6].e < 0.1 * own[0].e
    slopes = convergence_slopes(points)
    assert len(slopes) == 6
    assert all(s.slope < 0 for s in slopes)


def test_distance_and_gap_match_the_convergence_point():
    point = convergence_point(toy_family(ell0=1.0), toy_cost(), 2, 100.0)
    assert coefficient_distance(toy_family(ell0=1.0), toy_cost(), 2, 100.0) == point.r
    assert variance_gap(toy_family(ell0=1.0), toy_cost(), 2, 100.0) == point.e


@pytest.mark.parametrize("q, rate", [(2, 1.0), (3, 2.0), (4, 3.0)])
def test_richardson_differences_and_bias_decay_at_the_order_rate(q, rate):
    moments = family_moments(toy_family(L=10, mean=[1.0, 1.0, 1.0, 1.0]))
    vectors = re_vectors(10, TOY_RATES, q)
    levels = range(4, 11)
    # |A^T d|^2 avoids the cancellation in d^T C d
    variances = [(k, np.log2(np.sum((moments.factor.T @ vectors.difference(k)) ** 2))) for k in levels]
    biases = [(k, np.log2(abs(re_bias(vectors.v(k), moments)))) for k in levels]
    assert TOY_RATES.gamma(q) == rate
    assert fit_rate(variances).slope == pytest.approx(-2.0 * rate, rel=0.1)
    assert fit_rate(biases).slope == pytest.approx(-rate, rel=0.1)


def test_monte_carlo_cost_grows_like_eps_to_the_minus_three():
    grid = [3e-2 * 4.0 ** (-k / 4) for k in range(17)]
    result = cost_sweep(synthetic_family(), synthetic_cost(2.0), [EstimatorSpec("mc"), EstimatorSpec("mlmc")], eps_grid=grid)
    slopes = {s.estimator: s.slope for s in result.slopes}
    assert slopes["mc"] == pytest.approx(-3.0, abs=0.3)
    assert slopes["mlmc"] == pytest.approx(-2.0, abs=0.3)

    costs = {(r.estimator, r.eps): r.cost_continuous for r in result.records}
    for eps in grid:
        assert costs[("mlmc", eps)] <= costs[("mc", eps)]


def test_halving_eps_multiplies_the_monte_carlo_cost():
    family, cost = synthetic_family(), synthetic_cost(2.0)
    # midway between the accuracies reached on three and four levels
    eps = math.sqrt(2 * family_bias(synthetic_family(L=4)) * family_bias(synthetic_family(L=3)))
    coarse = mse_target_driver(family, cost, EstimatorSpec("mc"), eps)
    fine = mse_target_driver(family, cost, EstimatorSpec("mc"), eps / 4)
    assert (coarse.L, fine.L) == (4, 5)
    # two halvings, each multiplying the cost by 2^(2 + gamma_cost / gamma_bias)
    assert math.sqrt(fine.cost_continuous / coarse.cost_continuous) == pytest.approx(2.0 ** 3, rel=0.02)

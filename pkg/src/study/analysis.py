"""
Complexity and Convergence Studies

Drivers that turn the estimators into the numbers of a complexity study:

1. Cost bounds: for bias rate gamma_b, group-variance rate gamma_v and cost
   rate gamma_c, the cost of reaching an MSE of eps^2 is bounded by

       eps^(-gamma_c / gamma_b) + eps^-2                     gamma_c < gamma_v
       eps^(-gamma_c / gamma_b) + eps^-2 log(eps)^2          gamma_c = gamma_v
       eps^(-gamma_c / gamma_b) + eps^(-2 - (gamma_c - gamma_v) / gamma_b)   otherwise

2. MSE targeting: pick the coarsest finest-level L whose squared bias fits
   into half the MSE budget and size the estimator for the other half.

3. Cost sweeps over an eps grid, or over the finest level with bias^2 = Var,
   with least-squares slopes of log(cost) against log(eps).

4. The convergence study: as the models move into the asymptotic regime
   (growing ell0), the optimal BLUE with coupling q approaches the RE
   estimator of the same coupling. Measured by the coefficient distance r^q
   and the relative variance gap e^q.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy import stats

from ..blue.allocation import SolverOptions, allocate_scheme, saob_allocate
from ..blue.core import extract_beta
from ..blue.errors import InfeasibleTarget
from ..blue.extrapolation import mlmc_scheme, weighted_re_scheme
from ..blue.groups import enumerate_groups
from ..family.cost import CostModel
from ..family.model_family import ExpansionFamily, family_moments
from .estimators import EstimatorSpec, design_for_variance, round_design


logger = logging.getLogger(__name__)

T = TypeVar("T")

BELOW, EQUAL, ABOVE = "below", "equal", "above"


@dataclass(frozen=True)
class CostBranchPrediction:
    """
    Predicted cost growth eps^first + eps^second |log eps|^log_power.

    Attributes:
        gamma_bias (float): Bias decay rate
        gamma_var (float): Group-variance decay rate
        gamma_cost (float): Cost growth rate
        branch (str): below, equal or above (gamma_cost against gamma_var)
        first_exponent (float): Exponent of the bias-driven term
        second_exponent (float): Exponent of the variance-driven term
        log_power (int): Power of |log eps| on the second term
    """
    gamma_bias: float
    gamma_var: float
    gamma_cost: float
    branch: str
    first_exponent: float
    second_exponent: float
    log_power: int

    def value(self, eps: float) -> float:
        """The bound up to constants at accuracy eps."""
        return eps ** self.first_exponent + eps ** self.second_exponent * abs(math.log(eps)) ** self.log_power


@dataclass(frozen=True)
class ComplexityRow:
    """One estimator of the complexity table."""
    estimator: str
    bias_target: str
    coupling: Optional[int]
    gamma_bias: float
    gamma_var: float
    prediction: CostBranchPrediction


@dataclass(frozen=True)
class SweepRecord:
    """
    One point of a cost sweep.

    Attributes:
        estimator (str): Estimator name
        eps (float): Requested root-MSE
        L (int): Finest level used
        cost_continuous (float): Cost with fractional counts
        cost_rounded (float): Cost after rounding the counts
        variance (float): Estimator variance with fractional counts
        bias_sq (float): Squared bias of the bias vector
        mse (float): bias_sq + variance
    """
    estimator: str
    eps: float
    L: int
    cost_continuous: float
    cost_rounded: float
    variance: float
    bias_sq: float
    mse: float


@dataclass(frozen=True)
class SlopeRecord:
    estimator: str
    slope: float
    stderr: float


@dataclass(frozen=True)
class SweepResult:
    records: List[SweepRecord]
    slopes: List[SlopeRecord]


@dataclass(frozen=True)
class RateFit:
    """
    Least-squares line y = slope * x + intercept.

    Attributes:
        slope (float): Fitted slope
        intercept (float): Fitted intercept
        residual (float): Root-mean-square residual
        stderr (float): Standard error of the slope
    """
    slope: float
    intercept: float
    residual: float
    stderr: float


@dataclass(frozen=True)
class ConvergencePoint:
    """
    RE against optimal BLUE at one base accuracy.

    Attributes:
        ell0 (float): Level shift of the family
        q (int): Coupling bound of both estimators
        r (float): Coefficient distance r^q
        e (float): Relative variance gap e^q
        var_re (float): Variance of the RE estimator
        var_saob (float): Variance of the optimal BLUE
    """
    ell0: float
    q: int
    r: float
    e: float
    var_re: float
    var_saob: float


def _map(function: Callable[..., T], tasks: Sequence[tuple], threads: int) -> List[T]:
    """Apply ``function`` to every task, keeping task order."""
    if threads <= 1:
        return [function(*task) for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda task: function(*task), tasks))


def predicted_cost_bound(gamma_bias: float, gamma_var: float, gamma_cost: float, eps: Optional[float] = None) -> CostBranchPrediction:
    """
    Branch and exponents of the generic cost bound.

    Args:
        gamma_bias (float): Bias rate, positive
        gamma_var (float): Group-variance rate, nonnegative
        gamma_cost (float): Cost rate, positive
        eps (Optional[float]): If given, validated to lie in (0, 1)

    Returns:
        CostBranchPrediction: For example MC with rates (2, 0, 2) gives
        eps^-1 + eps^-3

    Raises:
        ValueError: On rates or eps out of range
    """
    if not gamma_bias > 0 or not gamma_cost > 0 or gamma_var < 0:
        raise ValueError(f"Invalid rates: bias {gamma_bias}, variance {gamma_var}, cost {gamma_cost}")
    if eps is not None and not 0 < eps < 1:
        raise ValueError(f"Accuracy must lie in (0, 1), got {eps}")

    first = -gamma_cost / gamma_bias
    if gamma_cost < gamma_var:
        branch, second, log_power = BELOW, -2.0, 0
    elif gamma_cost == gamma_var:
        branch, second, log_power = EQUAL, -2.0, 2
    else:
        branch, second, log_power = ABOVE, -2.0 - (gamma_cost - gamma_var) / gamma_bias, 0
    return CostBranchPrediction(gamma_bias, gamma_var, gamma_cost, branch, first, second, log_power)


def coupling_variance_rate(q: Optional[int], gammas: Sequence[float]) -> float:
    """
    Variance rate of the best group terms when at most q models are coupled.

    Coupling one model leaves the variance constant; coupling j models
    cancels the leading j - 1 expansion terms, giving 2 gamma_j, capped at
    the last available rate.
    """
    if q is not None and q < 1:
        raise ValueError(f"Coupling must be at least 1, got {q}")
    index = len(gammas) if q is None else min(q, len(gammas))
    return 2.0 * gammas[index - 1]


def complexity_table(gamma_cost: float, gammas: Sequence[float] = (0.0, 2.0, 4.0)) -> List[ComplexityRow]:
    """
    The predicted cost exponents of the twelve standard estimators.

    Six estimators target E[Z_L] (bias rate gamma_2) and six the order-3
    RE combination v^{L,3} (bias rate gamma_3). MFMC couples all models but
    is listed with the MLMC rates.
    """
    rows = []
    unit_bias, re_bias = gammas[1], gammas[2]
    entries: List[Tuple[str, str, Optional[int], float, float]] = [
        ("MC", "e_L", 1, unit_bias, coupling_variance_rate(1, gammas)),
        ("MLMC", "e_L", 2, unit_bias, coupling_variance_rate(2, gammas)),
        ("MFMC", "e_L", None, unit_bias, coupling_variance_rate(2, gammas)),
        ("SAOB,2", "e_L", 2, unit_bias, coupling_variance_rate(2, gammas)),
        ("SAOB,3", "e_L", 3, unit_bias, coupling_variance_rate(3, gammas)),
        ("SAOB", "e_L", None, unit_bias, coupling_variance_rate(None, gammas)),
        ("MC", "v_L3", 1, re_bias, coupling_variance_rate(1, gammas)),
        ("RE,2", "v_L3", 2, re_bias, coupling_variance_rate(2, gammas)),
        ("RE,3", "v_L3", 3, re_bias, coupling_variance_rate(3, gammas)),
        ("SAOB,2", "v_L3", 2, re_bias, coupling_variance_rate(2, gammas)),
        ("SAOB,3", "v_L3", 3, re_bias, coupling_variance_rate(3, gammas)),
        ("SAOB", "v_L3", None, re_bias, coupling_variance_rate(None, gammas)),
    ]
    for name, target, q, gamma_b, gamma_v in entries:
        rows.append(ComplexityRow(name, target, q, gamma_b, gamma_v, predicted_cost_bound(gamma_b, gamma_v, gamma_cost)))
    return rows


def fit_rate(points: Iterable[Tuple[float, float]]) -> RateFit:
    """
    Ordinary least squares through (x, y) points.

    Raises:
        ValueError: With fewer than three points or identical abscissae
    """
    points = list(points)
    if len(points) < 3:
        raise ValueError(f"Need at least 3 points to fit a rate, got {len(points)}")
    x, y = np.array(points, dtype=float).T
    if np.all(x == x[0]):
        raise ValueError("Cannot fit a rate through identical abscissae")
    fit = stats.linregress(x, y)
    residual = y - (fit.slope * x + fit.intercept)
    return RateFit(float(fit.slope), float(fit.intercept), float(np.sqrt(np.mean(residual ** 2))), float(fit.stderr))


def _record(spec: EstimatorSpec, family: ExpansionFamily, cost: CostModel, eps: float, L: int, bias_sq: float, target: float, rounding: str, opts: Optional[SolverOptions]) -> SweepRecord:
    moments = family_moments(family)
    design = design_for_variance(spec, moments, cost, family.rates, L, target, opts)
    rounded = round_design(design, moments, rounding)
    return SweepRecord(
        estimator=spec.name,
        eps=eps,
        L=L,
        cost_continuous=design.cost,
        cost_rounded=rounded.cost,
        variance=design.variance,
        bias_sq=bias_sq,
        mse=bias_sq + design.variance,
    )


def _bias_sq(spec: EstimatorSpec, family: ExpansionFamily, L: int) -> float:
    moments = family_moments(family).truncate(L)
    return moments.bias(spec.alpha(L, family.rates)) ** 2


def mse_target_driver(
    family: ExpansionFamily,
    cost: CostModel,
    spec: EstimatorSpec,
    eps: float,
    rounding: str = "ceil",
    opts: Optional[SolverOptions] = None,
) -> SweepRecord:
    """
    Size an estimator for a root-MSE of eps.

    The finest level is the smallest L <= family.L with bias^2 <= eps^2 / 2,
    the variance target is eps^2 / 2. A family without bias uses L = family.L
    and the whole budget eps^2 for the variance.

    Raises:
        InfeasibleTarget: If no level up to family.L is accurate enough
    """
    if not eps > 0:
        raise ValueError(f"Accuracy must be positive, got {eps}")
    if not family.has_bias:
        return _record(spec, family, cost, eps, family.L, 0.0, eps ** 2, rounding, opts)

    for L in range(1, family.L + 1):
        bias_sq = _bias_sq(spec, family, L)
        if bias_sq <= eps ** 2 / 2:
            return _record(spec, family, cost, eps, L, bias_sq, eps ** 2 / 2, rounding, opts)
    raise InfeasibleTarget(f"eps = {eps:.3e} needs more than {family.L} levels for {spec.name}")


def level_driver(
    family: ExpansionFamily,
    cost: CostModel,
    spec: EstimatorSpec,
    L: int,
    rounding: str = "ceil",
    opts: Optional[SolverOptions] = None,
) -> SweepRecord:
    """
    Size an estimator on L levels with variance equal to its squared bias.

    The accuracy reported is eps = sqrt(2) * bias, so the MSE is eps^2.

    Raises:
        InfeasibleTarget: If the bias vanishes on L levels
    """
    bias_sq = _bias_sq(spec, family, L)
    if not bias_sq > 0:
        raise InfeasibleTarget(f"{spec.name} has no bias on {L} levels, cannot balance the variance")
    return _record(spec, family, cost, math.sqrt(2.0 * bias_sq), L, bias_sq, bias_sq, rounding, opts)


def _slopes(records: List[SweepRecord], specs: Sequence[EstimatorSpec], rounding: str) -> List[SlopeRecord]:
    slopes = []
    for spec in specs:
        own = [r for r in records if r.estimator == spec.name]
        if len(own) < 3:
            logger.warning("Only %d sweep points for %s, no slope fitted", len(own), spec.name)
            continue
        variants = [("", lambda r: r.cost_continuous)]
        if rounding != "none":
            variants.append((f"+{rounding}", lambda r: r.cost_rounded))
        for suffix, key in variants:
            fit = fit_rate((math.log(r.eps), math.log(key(r))) for r in own)
            slopes.append(SlopeRecord(spec.name + suffix, fit.slope, fit.stderr))
    return slopes


def cost_sweep(
    family: ExpansionFamily,
    cost: CostModel,
    specs: Sequence[EstimatorSpec],
    eps_grid: Optional[Sequence[float]] = None,
    levels: Optional[Sequence[int]] = None,
    rounding: str = "ceil",
    threads: int = 1,
    opts: Optional[SolverOptions] = None,
) -> SweepResult:
    """
    Cost against accuracy for several estimators.

    Exactly one of ``eps_grid`` (MSE targeting with the half/half split) or
    ``levels`` (bias^2 = Var on each finest level) selects the sweep mode.
    Slopes of log(cost) against log(eps) are fitted per estimator, for the
    continuous and for the rounded cost.

    Returns:
        SweepResult: Records in (estimator, grid) order and fitted slopes
    """
    if (eps_grid is None) == (levels is None):
        raise ValueError("Give either an eps grid or a list of levels")
    if eps_grid is not None:
        tasks = [(family, cost, spec, eps, rounding, opts) for spec in specs for eps in eps_grid]
        records = _map(mse_target_driver, tasks, threads)
    else:
        tasks = [(family.with_levels(max(L, 1)), cost, spec, L, rounding, opts) for spec in specs for L in levels]
        records = _map(level_driver, tasks, threads)
    logger.info("Cost sweep: %d records for %d estimators", len(records), len(specs))
    return SweepResult(records, _slopes(records, specs, rounding))


def _union_distance(first: Dict[str, np.ndarray], second: Dict[str, np.ndarray], L: int) -> float:
    total = 0.0
    for label in set(first) | set(second):
        difference = first.get(label, np.zeros(L)) - second.get(label, np.zeros(L))
        total += float(difference @ difference)
    return math.sqrt(total)


def convergence_point(
    family: ExpansionFamily,
    cost: CostModel,
    q: int,
    budget: float,
    opts: Optional[SolverOptions] = None,
) -> ConvergencePoint:
    """
    Compare RE and the optimal BLUE with coupling q at equal budget.

    Both estimate E[Z_L]. RE is MLMC for q = 2 and the weighted RE estimator
    with variance order q and bias order 2 otherwise. The BLUE solve starts
    from the RE allocation. Coefficients are compared over the union of the
    groups either estimator uses.
    """
    if q < 2:
        raise ValueError(f"Coupling must be at least 2, got {q}")
    L = family.L
    moments = family_moments(family)
    alpha = np.zeros(L)
    alpha[L - 1] = 1.0

    re = mlmc_scheme(L) if q == 2 else weighted_re_scheme(L, family.rates, q, 2)
    re, re_alloc = allocate_scheme(re, moments, cost, budget)

    system = enumerate_groups(L, q, cost)
    start = np.zeros(len(system))
    for group, count in zip(re.groups, re.m):
        start[system.index(group)] += count
    alloc = saob_allocate(system, moments, alpha, budget, opts, starts=[start])
    betas = extract_beta(system, moments, alloc.m, alpha)

    saob_terms = {g.label: b for g, b, m in zip(system.groups, betas, alloc.m) if m > 0}
    re_terms = {g.label: b for g, b in zip(re.groups, re.betas)}
    return ConvergencePoint(
        ell0=family.ell0,
        q=q,
        r=_union_distance(saob_terms, re_terms, L),
        e=(re_alloc.variance - alloc.variance) / alloc.variance,
        var_re=re_alloc.variance,
        var_saob=alloc.variance,
    )


def coefficient_distance(family: ExpansionFamily, cost: CostModel, q: int, budget: float, opts: Optional[SolverOptions] = None) -> float:
    """r^q: distance between optimal BLUE and RE coefficients."""
    return convergence_point(family, cost, q, budget, opts).r


def variance_gap(family: ExpansionFamily, cost: CostModel, q: int, budget: float, opts: Optional[SolverOptions] = None) -> float:
    """e^q: relative variance loss of RE against the optimal BLUE."""
    return convergence_point(family, cost, q, budget, opts).e


def convergence_study(
    family: ExpansionFamily,
    cost: CostModel,
    couplings: Sequence[int],
    ell0s: Sequence[float],
    budget: float,
    threads: int = 1,
    opts: Optional[SolverOptions] = None,
) -> List[ConvergencePoint]:
    """r^q and e^q for every (ell0, q), ordered by ell0 then q."""
    tasks = [(family.with_ell0(ell0), cost, q, budget, opts) for ell0 in ell0s for q in couplings]
    points = _map(convergence_point, tasks, threads)
    logger.info("Convergence study: %d points", len(points))
    return points


def convergence_slopes(points: Sequence[ConvergencePoint]) -> List[SlopeRecord]:
    """Fitted log2 slopes of r^q and e^q against ell0, per coupling."""
    slopes = []
    for q in sorted({p.q for p in points}):
        own = [p for p in points if p.q == q]
        for name, key in (("r", lambda p: p.r), ("e", lambda p: p.e)):
            usable = [(p.ell0, math.log2(key(p))) for p in own if key(p) > 0]
            if len(usable) < 3:
                logger.warning("Too few positive %s_q%d values for a slope", name, q)
                continue
            fit = fit_rate(usable)
            slopes.append(SlopeRecord(f"{name}_q{q}", fit.slope, fit.stderr))
    return slopes

"""
Sample Allocation

Given a computational budget p, how many events m_k of each group should be
drawn? Two problems are solved here.

Fixed coefficients:
    With beta^k fixed, Var = sum_k sigma_k^2 / m_k with sigma_k^2 =
    beta^k^T C beta^k, and the minimizer under sum_k m_k W_k = p is

        m_k = p / J * sqrt(sigma_k^2 / W_k),   J = sum_k sqrt(sigma_k^2 W_k)

    with optimal variance J^2 / p.

Optimal BLUE (SAOB):
    minimize alpha^T Psi(m)^-1 alpha  subject to  sum_k m_k W_k = p, m >= 0

    The objective is convex in m. The solver works on budget fractions
    x_k = m_k W_k / p on the unit simplex with a spectral projected gradient
    method: Barzilai-Borwein trial steps, projection onto the simplex and
    Armijo backtracking, so every accepted step decreases the variance. The
    gradient is exact, dVar/dm_k = -u_S^T (C^k)^-1 u_S with u = Psi^-1 alpha.

    Convergence is measured by the relative Frank-Wolfe gap, which bounds
    the distance to the optimal variance because the problem is convex.

Singleton groups are floored at a tiny budget fraction during the iteration
so every level stays covered; groups below the activity threshold are
dropped at the end and the freed budget is redistributed.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from ..family.cost import CostModel
from ..family.moments import MomentData, readonly
from .core import Covariance, GroupFactors, as_moments, group_factors
from .errors import BlueError, InfeasibleTarget, NumericalFailure
from .groups import GroupSystem, ModelGroup
from .scheme import EstimatorScheme, group_variances


logger = logging.getLogger(__name__)

# Armijo sufficient decrease parameter
ARMIJO = 1e-4

# Backtracking gives up below this step fraction
MIN_STEP_FRACTION = 1e-20

ROUNDING_POLICIES = ("ceil", "none")


@dataclass(frozen=True)
class SolverOptions:
    """
    Settings of the SAOB solver.

    Attributes:
        max_iters (int): Iteration limit
        rtol (float): Relative improvement counted as stagnation
        activity (float): Budget fraction below which a group is dropped
        floor (float): Budget fraction kept on singleton groups while iterating
        gap_tol (float): Relative Frank-Wolfe gap accepted as optimal
        stall_iters (int): Consecutive stagnating iterations before stopping
    """
    max_iters: int = 10_000
    rtol: float = 1e-12
    activity: float = 1e-8
    floor: float = 1e-12
    gap_tol: float = 1e-10
    stall_iters: int = 5

    def __post_init__(self):
        for name in ("max_iters", "rtol", "activity", "floor", "gap_tol", "stall_iters"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Solver option {name} must be positive")


@dataclass(frozen=True, eq=False)
class Allocation:
    """
    Events per group and what they buy.

    Attributes:
        m (np.ndarray): Events per group, continuous or integral
        costs (np.ndarray): Cost W_k of one event of each group
        variance (Optional[float]): Predicted estimator variance, if known
        iterations (int): Solver iterations spent (0 for closed forms)
        gap (Optional[float]): Relative optimality gap reported by the solver
    """
    m: np.ndarray
    costs: np.ndarray
    variance: Optional[float] = None
    iterations: int = 0
    gap: Optional[float] = None

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        costs = np.array(self.costs, dtype=float)
        if m.shape != costs.shape or m.ndim != 1:
            raise ValueError(f"Counts {m.shape} and costs {costs.shape} do not match")
        if np.any(m < 0):
            raise ValueError("Sample counts must be nonnegative")
        object.__setattr__(self, "m", readonly(m))
        object.__setattr__(self, "costs", readonly(costs))

    @property
    def cost(self) -> float:
        """Consumed budget sum_k m_k W_k."""
        return float(self.m @ self.costs)

    @property
    def integral(self) -> bool:
        return bool(np.all(self.m == np.floor(self.m)))

    @property
    def active(self) -> np.ndarray:
        return self.m > 0

    def scaled(self, factor: float) -> "Allocation":
        """The same design with every count multiplied by ``factor``."""
        variance = None if self.variance is None else self.variance / factor
        return replace(self, m=self.m * factor, variance=variance)


@dataclass(frozen=True)
class KKTReport:
    """
    Optimality residuals of a continuous allocation.

    With r_k = s_k / W_k the marginal variance reduction per unit cost and
    lambda = Var / p, the optimality conditions read r_k = lambda on active
    groups and r_k <= lambda elsewhere.

    Attributes:
        multiplier (float): lambda
        gap (float): max_k r_k / lambda - 1, the relative Frank-Wolfe gap
        stationarity (float): sum_k x_k |r_k / lambda - 1| over budget fractions x
        active (int): Number of groups with samples
    """
    multiplier: float
    gap: float
    stationarity: float
    active: int


def closed_form_allocation(group_variances: Sequence[float], costs: Sequence[float], budget: float) -> Tuple[Allocation, float]:
    """
    Optimal counts for fixed coefficients.

    Args:
        group_variances: sigma_k^2 = beta^k^T C beta^k
        costs: W_k
        budget (float): p > 0

    Returns:
        Tuple[Allocation, float]: The allocation and its variance J^2 / p

    Raises:
        ValueError: On a nonpositive budget or cost, or if every sigma_k^2 is zero

    Examples:
        sigma^2 = (4, 1), W = (1, 4), p = 8 -> m = (4, 1), variance 2
    """
    sigma2 = np.asarray(group_variances, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if not budget > 0:
        raise ValueError(f"Budget must be positive, got {budget}")
    if sigma2.shape != costs.shape:
        raise ValueError("Need one cost per group variance")
    if np.any(costs <= 0):
        raise ValueError("Group costs must be positive")
    if np.any(sigma2 < 0):
        raise ValueError("Group variances must be nonnegative")
    if not np.any(sigma2 > 0):
        raise ValueError("All group variances vanish")

    spend = np.sqrt(sigma2 * costs)
    total = math.fsum(spend)
    m = budget / total * np.sqrt(sigma2 / costs)
    variance = total * total / budget
    return Allocation(m, costs, variance), variance


def project_simplex(v: np.ndarray, lower: np.ndarray, total: float = 1.0) -> np.ndarray:
    """
    Euclidean projection onto {x >= lower, sum x = total} by sorting.
    """
    y = v - lower
    radius = total - lower.sum()
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - radius
    index = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / index > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0) + lower


class _Objective:
    """Variance and gradient as functions of the budget fractions."""

    def __init__(self, factors: GroupFactors, alpha: np.ndarray, budget: float, costs: np.ndarray):
        self.factors = factors
        self.alpha = alpha
        self.per_fraction = budget / costs

    def counts(self, x: np.ndarray) -> np.ndarray:
        return x * self.per_fraction

    def __call__(self, x: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
        try:
            info = self.factors.information(self.counts(x))
            variance = info.variance(self.alpha)
            u = info.solve(self.alpha)
        except BlueError:
            return math.inf, None
        return variance, -self.per_fraction * self.factors.sensitivities(u)


def _fractions(m: np.ndarray, costs: np.ndarray) -> np.ndarray:
    spend = np.asarray(m, dtype=float) * costs
    return spend / spend.sum()


def _mlmc_start(system: GroupSystem, moments: MomentData, alpha: np.ndarray) -> Optional[np.ndarray]:
    """Budget fractions of MLMC (singleton plus neighbour pairs), or of MC for q = 1."""
    L = system.L
    spend = np.zeros(len(system))
    chain = [ModelGroup((1,))] + [ModelGroup((k - 1, k)) for k in range(2, L + 1)]
    indices = [system.find(group) for group in chain]
    if all(index is not None for index in indices):
        betas = np.eye(L) - np.eye(L, k=-1)
        spend[indices] = np.sqrt(moments.quad(betas) * system.costs[indices])
    else:
        for level in np.flatnonzero(alpha) + 1:
            index = system.singleton(int(level))
            if index is not None:
                spend[index] = abs(alpha[level - 1]) * math.sqrt(moments.C[level - 1, level - 1] * system.costs[index])
    if not spend.sum() > 0:
        return None
    return spend / spend.sum()


def _finalize(objective: _Objective, system: GroupSystem, alpha: np.ndarray, x: np.ndarray, opts: SolverOptions) -> np.ndarray:
    """Drop inactive groups and hand their budget to the rest."""
    keep = x >= opts.activity
    covered = objective.factors.membership[keep].any(axis=0)
    for level in np.flatnonzero((alpha != 0.0) & ~covered):
        index = system.singleton(int(level) + 1)
        if index is not None:
            keep[index] = True
    pruned = np.where(keep, x, 0.0)
    pruned /= pruned.sum()
    if not math.isfinite(objective(pruned)[0]):
        return x
    return pruned


def saob_allocate(
    system: GroupSystem,
    C: Covariance,
    alpha: Sequence[float],
    budget: float,
    opts: Optional[SolverOptions] = None,
    starts: Iterable[np.ndarray] = (),
) -> Allocation:
    """
    Continuous sample allocation of the optimal BLUE.

    Args:
        system (GroupSystem): Admissible groups and their costs
        C: Moments (preferred) or covariance of the models
        alpha: Bias vector, not all zero
        budget (float): p > 0
        opts (SolverOptions): Solver settings
        starts: Extra starting allocations, one count per group each; the
            result never has a larger variance than any of them

    Returns:
        Allocation: Counts with sum_k m_k W_k = p and the achieved variance

    Raises:
        InfeasibleTarget: If no starting point gives a regular Psi
        NumericalFailure: If the solver does not converge within max_iters;
            the best iterate is attached
    """
    opts = opts or SolverOptions()
    moments = as_moments(C)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (system.L,):
        raise ValueError(f"Bias vector must have length {system.L}, got shape {alpha.shape}")
    if not np.any(alpha != 0.0):
        raise ValueError("Bias vector must not vanish")
    if not budget > 0:
        raise ValueError(f"Budget must be positive, got {budget}")
    if moments.L > system.L:
        moments = moments.truncate(system.L)

    costs = system.costs
    factors = group_factors(system, moments)
    objective = _Objective(factors, alpha, budget, costs)
    lower = np.array([opts.floor if group.size == 1 else 0.0 for group in system.groups])

    candidates = [np.full(len(system), 1.0 / len(system))]
    mlmc = _mlmc_start(system, moments, alpha)
    if mlmc is not None:
        candidates.insert(0, mlmc)
    candidates.extend(_fractions(start, costs) for start in starts)

    best = None
    for candidate in candidates:
        x = project_simplex(np.asarray(candidate, dtype=float), lower)
        f, g = objective(x)
        if best is None or f < best[1]:
            best = (x, f, g)
    x, f, g = best
    if not math.isfinite(f):
        raise InfeasibleTarget("No admissible allocation gives a regular information matrix")

    step = 1.0 / max(np.max(np.abs(g)), np.finfo(float).tiny)
    stalled = 0
    gap = math.inf
    for iteration in range(1, opts.max_iters + 1):
        gap = (float((x - lower) @ g) - (1.0 - lower.sum()) * float(np.min(g))) / f
        if gap <= opts.gap_tol:
            break

        direction = project_simplex(x - step * g, lower) - x
        slope = float(g @ direction)
        if not slope < 0:
            break

        fraction = 1.0
        while True:
            trial = x + fraction * direction
            f_trial, g_trial = objective(trial)
            if f_trial <= f + ARMIJO * fraction * slope:
                break
            fraction *= 0.5
            if fraction < MIN_STEP_FRACTION:
                f_trial = None
                break
        if f_trial is None:
            logger.debug("Line search stalled after %d iterations", iteration)
            break

        s, y = trial - x, g_trial - g
        curvature = float(s @ y)
        step = float(s @ s) / curvature if curvature > 0 else 10.0 * step
        step = min(max(step, 1e-30), 1e30)

        stalled = stalled + 1 if (f - f_trial) <= opts.rtol * f else 0
        x, f, g = trial, f_trial, g_trial
        if stalled >= opts.stall_iters:
            break
    else:
        failed = Allocation(objective.counts(x), costs, f, opts.max_iters, gap)
        raise NumericalFailure(f"SAOB solver did not converge in {opts.max_iters} iterations", best=failed)

    x = _finalize(objective, system, alpha, x, opts)
    m = objective.counts(x)
    variance = factors.information(m).variance(alpha)
    logger.info(
        "SAOB allocation: %d groups, %d active, %d iterations, variance %.6e, gap %.1e",
        len(system), int(np.sum(m > 0)), iteration, variance, gap,
    )
    return Allocation(m, costs, variance, iteration, gap)


def round_allocation(alloc: Allocation, policy: str = "ceil", threshold: float = 1e-8) -> Allocation:
    """
    Integer counts from a continuous allocation.

    Args:
        alloc (Allocation): Continuous allocation
        policy (str): "ceil" rounds every count above ``threshold`` up and
            zeroes the rest; "none" leaves the allocation unchanged
        threshold (float): Counts at or below this are dropped

    Returns:
        Allocation: Rounded counts; the predicted variance is cleared since it
        no longer applies

    Examples:
        (3.2, 1e-9) -> (4, 0)
    """
    if policy not in ROUNDING_POLICIES:
        raise ValueError(f"Unknown rounding policy: {policy}")
    if policy == "none":
        return alloc
    m = np.where(alloc.m > threshold, np.ceil(alloc.m), 0.0)
    variance = alloc.variance if np.array_equal(m, alloc.m) else None
    return Allocation(m, alloc.costs, variance, alloc.iterations, alloc.gap)


def budget_for_variance(
    system: GroupSystem,
    C: Covariance,
    alpha: Sequence[float],
    target_variance: float,
    opts: Optional[SolverOptions] = None,
    starts: Iterable[np.ndarray] = (),
) -> Tuple[float, Allocation]:
    """
    Smallest budget whose SAOB allocation reaches a target variance.

    Var is proportional to 1 / p, so one solve at p = 1 suffices.

    Returns:
        Tuple[float, Allocation]: The budget and the scaled allocation

    Raises:
        ValueError: If the target is not positive
    """
    if not target_variance > 0:
        raise ValueError(f"Target variance must be positive, got {target_variance}")
    unit = saob_allocate(system, C, alpha, 1.0, opts, starts)
    budget = unit.variance / target_variance
    alloc = unit.scaled(budget)

    moments = as_moments(C)
    if moments.L > system.L:
        moments = moments.truncate(system.L)
    achieved = group_factors(system, moments).information(alloc.m).variance(alpha)
    if abs(achieved - target_variance) > 1e-8 * target_variance:
        raise NumericalFailure(f"Scaled allocation misses the target variance ({achieved:.6e} vs {target_variance:.6e})")
    return budget, replace(alloc, variance=achieved)


def allocate_scheme(scheme: EstimatorScheme, moments: MomentData, cost: CostModel, budget: float) -> Tuple[EstimatorScheme, Allocation]:
    """Closed-form optimal counts for a scheme's fixed coefficients."""
    alloc, _ = closed_form_allocation(
        group_variances(scheme, moments.truncate(scheme.L)), scheme.group_costs(cost), budget
    )
    return scheme.with_counts(alloc.m), alloc


def scheme_budget_for_variance(scheme: EstimatorScheme, moments: MomentData, cost: CostModel, target_variance: float) -> Tuple[float, EstimatorScheme, Allocation]:
    """Budget and counts with which a fixed scheme reaches a target variance."""
    if not target_variance > 0:
        raise ValueError(f"Target variance must be positive, got {target_variance}")
    sigma2 = group_variances(scheme, moments.truncate(scheme.L))
    costs = scheme.group_costs(cost)
    total = math.fsum(np.sqrt(sigma2 * costs))
    budget = total * total / target_variance
    alloc, _ = closed_form_allocation(sigma2, costs, budget)
    return budget, scheme.with_counts(alloc.m), alloc


def kkt_residuals(system: GroupSystem, C: Covariance, alpha: Sequence[float], alloc: Allocation) -> KKTReport:
    """
    Optimality residuals of a continuous allocation.

    Returns:
        KKTReport: Multiplier, Frank-Wolfe gap and stationarity residual
    """
    moments = as_moments(C)
    if moments.L > system.L:
        moments = moments.truncate(system.L)
    factors = group_factors(system, moments)
    info = factors.information(alloc.m)
    variance = info.variance(alpha)
    u = info.solve(alpha)

    ratio = factors.sensitivities(u) / system.costs
    multiplier = variance / alloc.cost
    fractions = _fractions(alloc.m, system.costs)
    return KKTReport(
        multiplier=multiplier,
        gap=float(np.max(ratio) / multiplier - 1.0),
        stationarity=float(fractions @ np.abs(ratio / multiplier - 1.0)),
        active=int(np.sum(alloc.m > 0)),
    )

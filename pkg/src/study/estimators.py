"""
Estimator Specifications and Designs

An EstimatorSpec names an estimator family the way the run configuration
does (kind, coupling, bias target, orders). A Design is a concrete
realization on L levels: an EstimatorScheme with continuous sample counts,
the allocation behind it and the budget it consumes.

Kinds:
- mc: plain Monte Carlo on the levels of the bias vector
- mlmc: telescoping differences of neighbouring levels
- re: Richardson extrapolation of order ``coupling``
- wre: weighted RE with variance order s and bias order t
- saob: sample-allocation-optimal BLUE with coupling bound ``coupling``

Bias targets (mc and saob only; the others carry their own):
- unit_L: alpha = e_L, an unbiased estimator of E[Z_L]
- re_t: alpha = v^{L,t}, the order-t RE combination
"""

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from ..blue.allocation import (
    Allocation,
    SolverOptions,
    allocate_scheme,
    budget_for_variance,
    round_allocation,
    saob_allocate,
    scheme_budget_for_variance,
)
from ..blue.core import extract_beta, group_factors
from ..blue.extrapolation import mc_scheme, mlmc_scheme, re_scheme, re_vectors, weighted_re_scheme
from ..blue.groups import GroupSystem, enumerate_groups
from ..blue.scheme import EstimatorScheme, scheme_variance
from ..family.cost import CostModel
from ..family.model_family import RateVector
from ..family.moments import MomentData


KINDS = ("mc", "mlmc", "re", "wre", "saob")
BIAS_TARGETS = ("unit_L", "re_t")


@dataclass(frozen=True)
class EstimatorSpec:
    """
    An estimator family, independent of the number of levels.

    Attributes:
        kind (str): One of mc, mlmc, re, wre, saob
        coupling (Optional[int]): RE order, or SAOB coupling bound (None = unbounded)
        bias (str): unit_L or re_t
        s (Optional[int]): Variance order of weighted RE
        t (Optional[int]): Bias order of weighted RE or of the re_t target
        label (Optional[str]): Name in output files; derived when omitted
    """
    kind: str
    coupling: Optional[int] = None
    bias: str = "unit_L"
    s: Optional[int] = None
    t: Optional[int] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"Unknown estimator kind: {self.kind}")
        if self.bias not in BIAS_TARGETS:
            raise ValueError(f"Unknown bias target: {self.bias}")
        if self.kind == "re" and (self.coupling is None or self.coupling < 2):
            raise ValueError("RE needs an order (coupling) of at least 2")
        if self.kind == "wre" and (self.s is None or self.t is None or min(self.s, self.t) < 2):
            raise ValueError("Weighted RE needs orders s and t of at least 2")
        if self.kind == "saob" and self.coupling is not None and self.coupling < 1:
            raise ValueError("SAOB coupling must be at least 1")
        if self.bias == "re_t" and self.kind in ("mc", "saob") and (self.t is None or self.t < 2):
            raise ValueError("Bias target re_t needs an order t of at least 2")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "re":
            return f"re{self.coupling}"
        if self.kind == "wre":
            return f"wre{self.s}_{self.t}"
        suffix = "" if self.bias == "unit_L" else f"_v{self.t}"
        if self.kind == "saob":
            return f"saob{self.coupling or ''}{suffix}"
        return f"{self.kind}{suffix}"

    def alpha(self, L: int, rates: RateVector) -> np.ndarray:
        """The bias vector this estimator targets on L levels."""
        if self.kind == "re":
            return re_vectors(L, rates, self.coupling).v(L)
        if self.kind == "wre":
            return re_vectors(L, rates, self.t).v(L)
        if self.kind in ("mc", "saob") and self.bias == "re_t":
            return re_vectors(L, rates, self.t).v(L)
        alpha = np.zeros(L)
        alpha[L - 1] = 1.0
        return alpha

    def scheme(self, L: int, rates: RateVector) -> Optional[EstimatorScheme]:
        """The fixed-coefficient scheme with unit counts; None for SAOB."""
        if self.kind == "mc":
            return mc_scheme(L, 1.0, self.alpha(L, rates))
        if self.kind == "mlmc":
            return mlmc_scheme(L)
        if self.kind == "re":
            return re_scheme(L, rates, self.coupling)
        if self.kind == "wre":
            return weighted_re_scheme(L, rates, self.s, self.t)
        return None

    def system(self, L: int, cost: CostModel) -> GroupSystem:
        return enumerate_groups(L, self.coupling, cost)


@dataclass(frozen=True, eq=False)
class Design:
    """
    An estimator realized on L levels.

    Attributes:
        spec (EstimatorSpec): The estimator family
        scheme (EstimatorScheme): Groups, coefficients and counts
        alloc (Allocation): Counts, group costs and predicted variance
        system (Optional[GroupSystem]): Admissible groups (SAOB only)
    """
    spec: EstimatorSpec
    scheme: EstimatorScheme
    alloc: Allocation
    system: Optional[GroupSystem] = None

    @property
    def cost(self) -> float:
        return self.alloc.cost

    @property
    def variance(self) -> float:
        return self.alloc.variance


def _saob_design(spec: EstimatorSpec, system: GroupSystem, moments: MomentData, alpha: np.ndarray, alloc: Allocation) -> Design:
    betas = extract_beta(system, moments, alloc.m, alpha)
    scheme = EstimatorScheme(spec.name, system.groups, betas, alloc.m, alpha)
    return Design(spec, scheme, alloc, system)


def design_at_budget(
    spec: EstimatorSpec,
    moments: MomentData,
    cost: CostModel,
    rates: RateVector,
    L: int,
    budget: float,
    opts: Optional[SolverOptions] = None,
    starts: Iterable[np.ndarray] = (),
) -> Design:
    """Optimal continuous counts of an estimator for a given budget."""
    moments = moments.truncate(L)
    scheme = spec.scheme(L, rates)
    if scheme is not None:
        scheme, alloc = allocate_scheme(scheme, moments, cost, budget)
        return Design(spec, scheme, alloc)

    system = spec.system(L, cost)
    alpha = spec.alpha(L, rates)
    alloc = saob_allocate(system, moments, alpha, budget, opts, starts)
    return _saob_design(spec, system, moments, alpha, alloc)


def design_for_variance(
    spec: EstimatorSpec,
    moments: MomentData,
    cost: CostModel,
    rates: RateVector,
    L: int,
    target_variance: float,
    opts: Optional[SolverOptions] = None,
) -> Design:
    """Cheapest continuous design of an estimator reaching a target variance."""
    moments = moments.truncate(L)
    scheme = spec.scheme(L, rates)
    if scheme is not None:
        _, scheme, alloc = scheme_budget_for_variance(scheme, moments, cost, target_variance)
        return Design(spec, scheme, alloc)

    system = spec.system(L, cost)
    alpha = spec.alpha(L, rates)
    _, alloc = budget_for_variance(system, moments, alpha, target_variance, opts)
    return _saob_design(spec, system, moments, alpha, alloc)


def round_design(design: Design, moments: MomentData, policy: str = "ceil") -> Design:
    """
    Integer-count version of a design with its predicted variance.

    Every group with samples is rounded up, so it keeps at least one event.
    Fixed schemes keep their coefficients; SAOB recomputes its coefficients
    for the rounded counts.
    """
    if policy == "none":
        return design
    moments = moments.truncate(design.scheme.L)
    alloc = round_allocation(design.alloc, policy, threshold=0.0)
    if design.system is None:
        scheme = design.scheme.with_counts(alloc.m)
        return Design(design.spec, scheme, replace(alloc, variance=scheme_variance(scheme, moments)))

    alpha = design.scheme.alpha
    variance = group_factors(design.system, moments).information(alloc.m).variance(alpha)
    return _saob_design(design.spec, design.system, moments, alpha, replace(alloc, variance=variance))

"""
Linear Unbiased Estimator Schemes

An estimator scheme fixes a list of model groups S^k, one coefficient vector
beta^k per group and the number of events m_k drawn for each group. The
estimate of alpha^T mu is

    mu_hat = sum_k beta^k^T (1 / m_k) sum_i Z^k(w_i^k)

It is unbiased whenever sum_k beta^k = alpha and beta^k vanishes outside
S^k, and its variance is sum_k beta^k^T C beta^k / m_k. MC, MLMC, RE,
weighted RE and the coefficients of a sample-allocation-optimal BLUE are all
schemes.
"""

from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from ..family.cost import CostModel
from ..family.moments import MomentData, readonly
from .groups import ModelGroup, group_cost


# Note attached to weighted RE schemes whose weight bound is unproven
CONJECTURAL = "conjectural boundedness"


@dataclass(frozen=True, eq=False)
class EstimatorScheme:
    """
    A concrete linear estimator.

    Attributes:
        name (str): Identifier used in logs and CSV files, e.g. "mlmc"
        groups (Tuple[ModelGroup, ...]): Groups S^1..S^K
        betas (np.ndarray): Coefficient vectors beta^k as rows, shape (K, L)
        m (np.ndarray): Events per group, shape (K,)
        alpha (np.ndarray): The combination alpha^T mu being estimated
        notes (Tuple[str, ...]): Free-form metadata flags
    """
    name: str
    groups: Tuple[ModelGroup, ...]
    betas: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        groups = tuple(self.groups)
        betas = np.atleast_2d(np.array(self.betas, dtype=float))
        m = np.array(self.m, dtype=float)
        alpha = np.array(self.alpha, dtype=float)
        if betas.shape != (len(groups), alpha.size):
            raise ValueError(f"Coefficients have shape {betas.shape}, expected ({len(groups)}, {alpha.size})")
        if m.shape != (len(groups),):
            raise ValueError(f"Expected {len(groups)} sample counts, got shape {m.shape}")
        if np.any(m < 0):
            raise ValueError("Sample counts must be nonnegative")
        for group in groups:
            if group.indices[-1] > alpha.size:
                raise ValueError(f"Group {group} refers to a level beyond L = {alpha.size}")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "betas", readonly(betas))
        object.__setattr__(self, "m", readonly(m))
        object.__setattr__(self, "alpha", readonly(alpha))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def L(self) -> int:
        return self.alpha.size

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def coupling(self) -> int:
        return max(group.size for group in self.groups)

    def with_counts(self, m: Sequence[float]) -> "EstimatorScheme":
        return replace(self, m=np.asarray(m, dtype=float))

    def group_costs(self, cost: CostModel) -> np.ndarray:
        return np.array([group_cost(group, cost) for group in self.groups])


@dataclass(frozen=True)
class UnbiasedCheck:
    """
    Outcome of check_unbiased.

    Attributes:
        passed (bool): True when no violation was found
        residual (float): max |sum_k beta^k - alpha|
        violations (Tuple[str, ...]): Human-readable descriptions
    """
    passed: bool
    residual: float
    violations: Tuple[str, ...]


def group_variances(scheme: EstimatorScheme, moments: MomentData) -> np.ndarray:
    """sigma_k^2 = beta^k^T C beta^k for every group."""
    return np.asarray(moments.quad(scheme.betas), dtype=float).reshape(scheme.K)


def scheme_variance(scheme: EstimatorScheme, moments: MomentData) -> float:
    """
    Variance sum_k beta^k^T C beta^k / m_k of a scheme.

    Raises:
        ValueError: If a group with nonzero coefficients has no samples
    """
    if moments.L < scheme.L:
        raise ValueError(f"Moments cover {moments.L} levels, scheme needs {scheme.L}")
    if moments.L > scheme.L:
        moments = moments.truncate(scheme.L)
    used = np.any(scheme.betas != 0.0, axis=1)
    if np.any(used & (scheme.m == 0)):
        empty = [str(g) for g, u, m in zip(scheme.groups, used, scheme.m) if u and m == 0]
        raise ValueError(f"Groups {', '.join(empty)} have coefficients but no samples")
    sigma2 = group_variances(scheme, moments)
    return float(np.sum(sigma2[used] / scheme.m[used]))


def scheme_cost(scheme: EstimatorScheme, cost: CostModel) -> float:
    """Total cost sum_k m_k W_k."""
    return float(scheme.m @ scheme.group_costs(cost))


def check_unbiased(scheme: EstimatorScheme, tol: float = 1e-10) -> UnbiasedCheck:
    """
    Verify sum_k beta^k = alpha, the support condition and m_k = 0 => beta^k = 0.

    Args:
        scheme (EstimatorScheme): The scheme to check
        tol (float): Tolerance relative to max(1, max |alpha|)

    Returns:
        UnbiasedCheck: Never raises; every violation is listed
    """
    violations: List[str] = []
    scale = max(1.0, float(np.max(np.abs(scheme.alpha))))
    residual = float(np.max(np.abs(scheme.betas.sum(axis=0) - scheme.alpha)))
    if residual > tol * scale:
        violations.append(f"sum of coefficients differs from alpha by {residual:.3e}")

    for group, beta, m in zip(scheme.groups, scheme.betas, scheme.m):
        outside = np.delete(beta, group.positions)
        if np.any(np.abs(outside) > tol * scale):
            violations.append(f"group {group} has coefficients outside its levels")
        if m == 0 and np.any(beta != 0.0):
            violations.append(f"group {group} has coefficients but no samples")

    return UnbiasedCheck(not violations, residual, tuple(violations))

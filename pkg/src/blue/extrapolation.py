"""
Richardson Extrapolation Schemes

If the models obey Z_l ~ Z + sum_j c_j 2^(-l gamma_j), a suitable combination
of consecutive levels cancels the leading error terms. The RE coefficient
vectors of order q are defined recursively with the down shift D,
(D v)_l = v_(l-1):

    v^0 = 0
    v^1 = e_1
    v^k = (2^gamma_k D v^(k-1) - v^(k-1)) / (2^gamma_k - 1)    for 1 < k < q
    v^k = D v^(k-1)                                          for k >= q

Every v^k has entries summing to one and lives on the q - 1 levels ending at
k. Telescoping over the differences v^k - v^(k-1) gives the RE estimator with
groups S^k = {max(k - q + 1, 1), ..., k}. For q = 2 this is exactly MLMC.

The weighted RE estimator decouples the bias order t from the variance order
s: it reuses the order-s differences but weights them so that the
coefficients add up to v^L of order t.

Examples:
    rates (0, 2, 4), q = 3:  v^2 = (-1/3, 4/3), v^3 = (0, -1/3, 4/3)
    rates (0, 2, 4, g), q = 4:  v^3 = (1/45, -4/9, 64/45)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from ..family.model_family import RateVector
from ..family.moments import MomentData, readonly
from .errors import NumericalFailure
from .groups import ModelGroup
from .scheme import CONJECTURAL, EstimatorScheme


logger = logging.getLogger(__name__)

# Tolerated max-norm residual of the weighted RE reconstruction
RECONSTRUCTION_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class RECoefficients:
    """
    The RE coefficient vectors v^{0,q}..v^{L,q}.

    Attributes:
        vectors (np.ndarray): Row k holds v^{k,q}, shape (L + 1, L)
        rates (RateVector): Rates used by the recursion
        order (int): The order q
    """
    vectors: np.ndarray
    rates: RateVector
    order: int

    @property
    def L(self) -> int:
        return self.vectors.shape[1]

    def v(self, k: int) -> np.ndarray:
        return self.vectors[k]

    def difference(self, k: int) -> np.ndarray:
        """v^k - v^(k-1), the coefficients of the k-th RE group."""
        return self.vectors[k] - self.vectors[k - 1]

    def differences(self) -> np.ndarray:
        return np.diff(self.vectors, axis=0)


@dataclass(frozen=True, eq=False)
class WeightedREWeights:
    """
    Weights a_k with v^{L,t} = sum_k a_k (v^{k,s} - v^{k-1,s}).

    Attributes:
        a (np.ndarray): The weights a_1..a_L
        s (int): Variance order of the telescoping differences
        t (int): Bias order of the target vector
        residual (float): Max-norm reconstruction residual
    """
    a: np.ndarray
    s: int
    t: int
    residual: float

    @property
    def conjectural(self) -> bool:
        """Weight boundedness is only conjectured for s > t."""
        return self.s > self.t

    @property
    def max_weight(self) -> float:
        return float(np.max(np.abs(self.a)))


def _shift(v: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], v[:-1]))


def re_vectors(L: int, rates: RateVector, q: int) -> RECoefficients:
    """
    RE coefficient vectors of order q for levels 1..L.

    Args:
        L (int): Number of levels
        rates (RateVector): Expansion rates, at least q of them
        q (int): Order, at least 2

    Returns:
        RECoefficients: v^{0,q}..v^{L,q}

    Raises:
        ValueError: If q < 2 or q exceeds the number of rates
    """
    if L < 1:
        raise ValueError(f"Number of levels must be at least 1, got {L}")
    if q < 2:
        raise ValueError(f"RE order must be at least 2, got {q}")
    if q > rates.order:
        raise ValueError(f"RE order {q} needs {q} rates, only {rates.order} given")

    vectors = np.zeros((L + 1, L))
    vectors[1, 0] = 1.0
    for k in range(2, L + 1):
        previous = vectors[k - 1]
        if k < q:
            factor = 2.0 ** rates.gamma(k)
            vectors[k] = (factor * _shift(previous) - previous) / (factor - 1.0)
        else:
            vectors[k] = _shift(previous)
    return RECoefficients(readonly(vectors), rates, q)


def re_groups(L: int, q: int) -> Tuple[ModelGroup, ...]:
    """S^k = {max(k - q + 1, 1), ..., k} for k = 1..L."""
    return tuple(ModelGroup(tuple(range(max(k - q + 1, 1), k + 1))) for k in range(1, L + 1))


def _counts(m, K: int) -> np.ndarray:
    if m is None:
        return np.ones(K)
    counts = np.broadcast_to(np.asarray(m, dtype=float), (K,))
    return np.array(counts)


def re_scheme(L: int, rates: RateVector, q: int, m=None) -> EstimatorScheme:
    """
    The RE estimator of order q with beta^k = v^{k,q} - v^{k-1,q}.

    Args:
        m: Events per group, a scalar or one count per level; one each if None

    Returns:
        EstimatorScheme: Unbiased for alpha = v^{L,q}
    """
    coefficients = re_vectors(L, rates, q)
    return EstimatorScheme(
        name=f"re{q}",
        groups=re_groups(L, q),
        betas=coefficients.differences(),
        m=_counts(m, L),
        alpha=coefficients.v(L),
    )


def weighted_re_weights(L: int, rates: RateVector, s: int, t: int) -> WeightedREWeights:
    """
    Weights that turn order-s RE differences into an order-t bias vector.

    The differences b_k = v^{k,s} - v^{k-1,s} end at level k, so the system
    B a = v^{L,t} is upper triangular.

    Raises:
        ValueError: If s or t are not valid RE orders for the rates
        NumericalFailure: If the basis is degenerate or the reconstruction
            misses its tolerance
    """
    basis = re_vectors(L, rates, s).differences().T
    target = re_vectors(L, rates, t).v(L)
    if np.any(np.diag(basis) == 0.0):
        raise NumericalFailure(f"Order-{s} RE differences are linearly dependent")

    a = solve_triangular(basis, target, lower=False)
    residual = float(np.max(np.abs(basis @ a - target)))
    if residual > RECONSTRUCTION_TOLERANCE:
        raise NumericalFailure(f"Weighted RE reconstruction residual {residual:.3e}")
    weights = WeightedREWeights(readonly(a), s, t, residual)
    if weights.conjectural:
        logger.warning("Weighted RE with s=%d > t=%d: weight boundedness is conjectural", s, t)
    return weights


def weighted_re_scheme(L: int, rates: RateVector, s: int, t: int, m=None) -> EstimatorScheme:
    """Weighted RE estimator beta^k = a_k (v^{k,s} - v^{k-1,s}), alpha = v^{L,t}."""
    weights = weighted_re_weights(L, rates, s, t)
    differences = re_vectors(L, rates, s).differences()
    return EstimatorScheme(
        name=f"wre{s}_{t}",
        groups=re_groups(L, s),
        betas=differences * weights.a[:, None],
        m=_counts(m, L),
        alpha=re_vectors(L, rates, t).v(L),
        notes=(CONJECTURAL,) if weights.conjectural else (),
    )


def mc_scheme(L: int, m, alpha: Optional[Sequence[float]] = None) -> EstimatorScheme:
    """
    Plain Monte Carlo.

    Without alpha: one group {L} with beta = e_L. With alpha: independent
    singleton groups {l} with beta = alpha_l e_l over the support of alpha.
    """
    if alpha is None:
        alpha = np.zeros(L)
        alpha[L - 1] = 1.0
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (L,):
        raise ValueError(f"Bias vector must have length {L}, got shape {alpha.shape}")
    support = np.flatnonzero(alpha)
    if support.size == 0:
        raise ValueError("Bias vector must not vanish")

    groups = tuple(ModelGroup((int(i) + 1,)) for i in support)
    betas = np.zeros((support.size, L))
    betas[np.arange(support.size), support] = alpha[support]
    return EstimatorScheme("mc", groups, betas, _counts(m, support.size), alpha)


def mlmc_scheme(L: int, m=None) -> EstimatorScheme:
    """MLMC: groups {1}, {k-1, k} with beta^k = e_k - e_(k-1)."""
    groups = (ModelGroup((1,)),) + tuple(ModelGroup((k - 1, k)) for k in range(2, L + 1))
    betas = np.eye(L) - np.eye(L, k=-1)
    alpha = np.zeros(L)
    alpha[L - 1] = 1.0
    return EstimatorScheme("mlmc", groups, betas, _counts(m, L), alpha)


def re_bias(v: Sequence[float], moments: MomentData) -> float:
    """|v^T mu - E[Z]|, the bias of the combination v."""
    v = np.asarray(v, dtype=float)
    if v.size > moments.L:
        raise ValueError(f"Vector of length {v.size} exceeds {moments.L} levels")
    return abs(float(v @ moments.mu[: v.size]) - moments.truth_mean)


def sign_changes(beta: Sequence[float], group: ModelGroup) -> int:
    """Number of sign alternations of beta over the levels of a group."""
    signs = np.sign(np.asarray(beta, dtype=float)[group.positions])
    signs = signs[signs != 0]
    return int(np.sum(signs[1:] != signs[:-1]))

"""
Analytic Model Families with a Pathwise Asymptotic Expansion

An expansion family describes a hierarchy of models Z_1..Z_L that approximate
a random quantity Z. Every model is the truth plus a finite expansion in
powers of 2^-(l + ell0) and a small independent noise term:

    Z_l = Z + sum_j c_j 2^(-(l + ell0) gamma_j) + s * 2^(-(l + ell0) r) xi_l

where (Z, c_2, ..., c_q) is jointly Gaussian with mean ``mean`` and
covariance Q, xi_l are independent standard Gaussians, s is ``noise_scale``
and r is ``noise_rate``. Writing x = (Z, c_2, ..., c_q), the model reads

    Z_l = w_l^T x + s_l xi_l,   w_l = (1, 2^(-(l+ell0) gamma_2), ...)

so means and covariances are available in closed form:

    E[Z_l] = w_l^T mean
    Cov(Z_i, Z_j) = w_i^T Q w_j + delta_ij s_i^2

ell0 shifts every model towards the asymptotic regime. Raising it makes the
models more alike and the covariance increasingly ill-conditioned.
"""

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .moments import MomentData, readonly


@dataclass(frozen=True)
class RateVector:
    """
    Expansion rates of a model family.

    Attributes:
        gammas (Tuple[float, ...]): Rates gamma_1 = 0 < gamma_2 < ... < gamma_q
        gamma_cost (float): Growth rate of the per-level cost

    Examples:
        RateVector((0, 2, 4), 6) -> rates of the synthetic elliptic study
    """
    gammas: Tuple[float, ...]
    gamma_cost: float

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "gamma_cost", float(self.gamma_cost))
        if not gammas:
            raise ValueError("At least one rate is required")
        if gammas[0] != 0.0:
            raise ValueError(f"First rate must be 0, got {gammas[0]}")
        if any(b <= a for a, b in zip(gammas, gammas[1:])):
            raise ValueError(f"Rates must be strictly increasing, got {gammas}")
        if not self.gamma_cost > 0:
            raise ValueError(f"Cost rate must be positive, got {self.gamma_cost}")

    @property
    def order(self) -> int:
        return len(self.gammas)

    def gamma(self, j: int) -> float:
        """The rate gamma_j, counted from 1."""
        if not 1 <= j <= self.order:
            raise ValueError(f"Rate index {j} outside 1..{self.order}")
        return self.gammas[j - 1]


@dataclass(frozen=True, eq=False)
class ExpansionFamily:
    """
    A Gaussian model family that satisfies the expansion by construction.

    Attributes:
        L (int): Number of levels
        rates (RateVector): Expansion rates; the first q_exp are used
        Q (np.ndarray): Covariance of (Z, c_2, ..., c_q), shape (q_exp, q_exp)
        mean (np.ndarray): Mean of (Z, c_2, ..., c_q); zero when omitted
        noise_scale (float): Scale of the independent level noise
        noise_rate (float): Decay rate of the level noise
        ell0 (float): Shift of the level index towards the asymptotic regime
        degenerate (bool): Accept a semidefinite Q (test families only)
    """
    L: int
    rates: RateVector
    Q: np.ndarray
    mean: Optional[np.ndarray] = None
    noise_scale: float = 0.0
    noise_rate: float = 0.0
    ell0: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"Number of levels must be at least 1, got {self.L}")
        Q = np.atleast_2d(np.array(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if Q.shape[0] > self.rates.order:
            raise ValueError(f"Expansion order {Q.shape[0]} exceeds the {self.rates.order} available rates")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(np.max(np.abs(Q)), 1.0)):
            raise ValueError("Q must be symmetric")
        if self.degenerate:
            if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
                raise ValueError("Q must be positive semidefinite")
        else:
            try:
                np.linalg.cholesky(Q)
            except np.linalg.LinAlgError:
                raise ValueError("Q must be symmetric positive definite") from None

        mean = np.zeros(Q.shape[0]) if self.mean is None else np.array(self.mean, dtype=float)
        if mean.shape != (Q.shape[0],):
            raise ValueError(f"Mean has shape {mean.shape}, expected ({Q.shape[0]},)")
        if self.noise_scale < 0:
            raise ValueError(f"Noise scale must be nonnegative, got {self.noise_scale}")
        if self.ell0 < 0:
            raise ValueError(f"ell0 must be nonnegative, got {self.ell0}")

        object.__setattr__(self, "Q", readonly(0.5 * (Q + Q.T)))
        object.__setattr__(self, "mean", readonly(mean))

    @property
    def q_exp(self) -> int:
        return self.Q.shape[0]

    @property
    def has_bias(self) -> bool:
        """False when every model is an unbiased approximation of E[Z]."""
        return bool(np.any(self.mean[1:] != 0.0))

    def levels(self) -> np.ndarray:
        return np.arange(1, self.L + 1, dtype=float) + self.ell0

    def weights(self) -> np.ndarray:
        """Level weights w_l as rows of an (L, q_exp) matrix."""
        gammas = np.array(self.rates.gammas[: self.q_exp])
        return 2.0 ** (-np.outer(self.levels(), gammas))

    def noise_sd(self) -> np.ndarray:
        """Standard deviations s_l of the level noise."""
        return self.noise_scale * 2.0 ** (-self.levels() * self.noise_rate)

    @cached_property
    def q_root(self) -> np.ndarray:
        """Square root B of Q with B B^T = Q."""
        if not self.degenerate:
            return np.linalg.cholesky(self.Q)
        eigenvalues, vectors = np.linalg.eigh(self.Q)
        return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    def latent_factor(self) -> np.ndarray:
        """Factor A = [W B | diag(s)] of the model covariance, C = A A^T."""
        return np.hstack([self.weights() @ self.q_root, np.diag(self.noise_sd())])

    def with_ell0(self, ell0: float) -> "ExpansionFamily":
        return replace(self, ell0=ell0)

    def with_levels(self, L: int) -> "ExpansionFamily":
        return replace(self, L=L)


def family_moments(family: ExpansionFamily) -> MomentData:
    """
    Exact moments of the models of an expansion family.

    Args:
        family (ExpansionFamily): The model family

    Returns:
        MomentData: Means w_l^T mean, covariance A A^T and E[Z] = mean_1,
        together with the latent factor A

    Examples:
        With Q = I, rates (0, 1, 2, 3), noise 0.1 at rate 3 and ell0 = 0,
        Var(Z_1) = 1 + 2^-2 + 2^-4 + 2^-6 + 0.01 * 2^-6 = 1.32828125.
    """
    factor = family.latent_factor()
    C = factor @ factor.T
    return MomentData(
        mu=family.weights() @ family.mean,
        C=0.5 * (C + C.T),
        truth_mean=float(family.mean[0]),
        factor=factor,
    )


def expansion_family(
    L: int,
    gammas: Sequence[float],
    gamma_cost: float,
    Q,
    mean=None,
    noise_scale: float = 0.0,
    noise_rate: float = 0.0,
    ell0: float = 0.0,
) -> ExpansionFamily:
    """Convenience constructor taking the rates as a plain sequence."""
    return ExpansionFamily(
        L=L,
        rates=RateVector(tuple(gammas), gamma_cost),
        Q=Q,
        mean=mean,
        noise_scale=noise_scale,
        noise_rate=noise_rate,
        ell0=ell0,
    )

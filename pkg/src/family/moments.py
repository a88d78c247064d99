"""
First and Second Moments of a Multilevel Model Hierarchy

MomentData bundles everything the estimators need to know about the models
Z_1..Z_L: their means, their covariance C and the quantity of interest E[Z].

Besides C itself the record carries a latent factor A with C = A A^T. All
linear algebra downstream works on A instead of C, so that models which are
nearly identical (C close to singular) keep full relative accuracy. When no
factor is supplied it is computed from C.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


def readonly(values) -> np.ndarray:
    """Return a float copy of ``values`` that cannot be modified in place."""
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


def _covariance_root(C: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        # Semidefinite C: symmetric square root with clipped eigenvalues
        eigenvalues, vectors = np.linalg.eigh(C)
        return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


@dataclass(frozen=True, eq=False)
class MomentData:
    """
    Analytic moments of the models Z_1..Z_L.

    Attributes:
        mu (np.ndarray): Means E[Z_l], shape (L,)
        C (np.ndarray): Model covariance, shape (L, L)
        truth_mean (float): The target expectation E[Z]
        factor (np.ndarray): Latent factor A with C = A A^T, shape (L, n)
    """
    mu: np.ndarray
    C: np.ndarray
    truth_mean: float = 0.0
    factor: Optional[np.ndarray] = None

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError(f"Covariance must be square, got shape {C.shape}")
        scale = max(np.max(np.abs(C)), 1.0) if C.size else 1.0
        if not np.allclose(C, C.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("Covariance must be symmetric")
        mu = np.zeros(C.shape[0]) if self.mu is None else np.array(self.mu, dtype=float)
        if mu.shape != (C.shape[0],):
            raise ValueError(f"Mean vector has shape {mu.shape}, expected ({C.shape[0]},)")

        factor = _covariance_root(C) if self.factor is None else np.array(self.factor, dtype=float)
        if factor.ndim != 2 or factor.shape[0] != C.shape[0]:
            raise ValueError(f"Factor has shape {factor.shape}, expected ({C.shape[0]}, n)")

        object.__setattr__(self, "mu", readonly(mu))
        object.__setattr__(self, "C", readonly(0.5 * (C + C.T)))
        object.__setattr__(self, "truth_mean", float(self.truth_mean))
        object.__setattr__(self, "factor", readonly(factor))

    @classmethod
    def from_covariance(cls, C, mu=None, truth_mean: float = 0.0) -> "MomentData":
        """Moments given by an explicit covariance matrix."""
        return cls(mu=mu, C=C, truth_mean=truth_mean)

    @property
    def L(self) -> int:
        return self.C.shape[0]

    def quad(self, beta) -> np.ndarray:
        """
        Quadratic form beta^T C beta, evaluated as ||A^T beta||^2.

        Args:
            beta: A vector of length L, or a (K, L) array of row vectors

        Returns:
            float for a single vector, otherwise an array of K values
        """
        beta = np.asarray(beta, dtype=float)
        projected = beta @ self.factor
        return np.sum(projected * projected, axis=-1)

    def bias(self, alpha) -> float:
        """Absolute bias |alpha^T mu - E[Z]| of the combination alpha."""
        return abs(float(np.dot(alpha, self.mu)) - self.truth_mean)

    def truncate(self, L: int) -> "MomentData":
        """Moments of the first L models only."""
        if not 1 <= L <= self.L:
            raise ValueError(f"Cannot truncate {self.L} levels to {L}")
        return MomentData(self.mu[:L], self.C[:L, :L], self.truth_mean, self.factor[:L])

"""
Best Linear Unbiased Estimation over Model Groups

Sampling m_k independent events of every group S^k produces a block linear
model for the mean vector mu. Its normal equations read

    Psi(m) mu_hat = y(m)
    Psi(m) = sum_k m_k P^k (C^k)^-1 R^k
    y(m)   = sum_k P^k (C^k)^-1 sum_i Z^k(w_i^k)

and the best linear unbiased estimate of alpha^T mu is alpha^T mu_hat with
variance alpha^T Psi(m)^-1 alpha. The same estimator can be written as a sum
of per-group Monte Carlo means weighted by

    beta^k = m_k P^k (C^k)^-1 R^k Psi(m)^-1 alpha

Numerics:
    Neither C^k nor Psi(m) is ever formed and inverted. Every group gets an
    upper-triangular factor R_k with C^k = R_k^T R_k from a QR decomposition
    of the rows of the latent factor A (C = A A^T). The whitened blocks
    G_k = R_k^-T R^k are stacked, scaled by sqrt(m_k), and a second QR gives
    the triangular root of Psi(m). This keeps full relative accuracy when
    C^k is close to singular, which happens for models deep in the
    asymptotic regime.

    Levels that no sampled group touches are dropped from Psi(m); the bias
    vector must vanish on them.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from ..family.moments import MomentData, readonly
from .errors import InfeasibleTarget, NumericalFailure
from .groups import GroupSystem, ModelGroup


logger = logging.getLogger(__name__)

# Groups whose covariance is worse conditioned than this are flagged
CONDITION_WARNING = 1e12

# Normwise backward error accepted for the normal equations
RESIDUAL_TOLERANCE = 1e-10

# Relative size below which a triangular pivot counts as zero
PIVOT_TOLERANCE = 1e-14

Groups = Union[GroupSystem, Sequence[ModelGroup]]
Covariance = Union[MomentData, np.ndarray]


def as_moments(C: Covariance) -> MomentData:
    """Accept either MomentData or a bare covariance matrix."""
    if isinstance(C, MomentData):
        return C
    return MomentData.from_covariance(C)


def _groups_of(system: Groups) -> Tuple[ModelGroup, ...]:
    if isinstance(system, GroupSystem):
        return system.groups
    return tuple(system)


def _sampled(groups: Tuple[ModelGroup, ...], m) -> np.ndarray:
    """Mask of the groups with a positive sample count."""
    m = np.asarray(m, dtype=float)
    if m.shape != (len(groups),):
        raise ValueError(f"Expected {len(groups)} sample counts, got shape {m.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError("Sample counts must be finite and nonnegative")
    if not np.any(m > 0):
        raise InfeasibleTarget("No group has a positive sample count")
    return m > 0


def _singular_pivots(R: np.ndarray) -> bool:
    pivots = np.abs(np.diag(R))
    return pivots.size == 0 or pivots.min() <= PIVOT_TOLERANCE * pivots.max()


@dataclass(frozen=True, eq=False)
class GroupFactors:
    """
    Whitened group blocks of a group list under fixed moments.

    Attributes:
        groups (Tuple[ModelGroup, ...]): The groups, in system order
        L (int): Number of levels
        whitening (np.ndarray): Stacked rows of G_k = R_k^-T R^k, shape (rows, L)
        row_group (np.ndarray): Group index of every row of ``whitening``
        membership (np.ndarray): Boolean (K, L) incidence of groups and levels
        conditions (np.ndarray): Condition numbers of the C^k
    """
    groups: Tuple[ModelGroup, ...]
    L: int
    whitening: np.ndarray
    row_group: np.ndarray
    membership: np.ndarray
    conditions: np.ndarray

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def flagged(self) -> List[ModelGroup]:
        """Groups with a near-singular covariance."""
        return [g for g, c in zip(self.groups, self.conditions) if c > CONDITION_WARNING]

    def _per_group(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.row_group, weights=values, minlength=self.K)

    def sensitivities(self, u: np.ndarray) -> np.ndarray:
        """s_k = ||G_k u||^2 = u_S^T (C^k)^-1 u_S, so dVar/dm_k = -s_k."""
        projected = self.whitening @ u
        return self._per_group(projected * projected)

    def betas(self, m: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Rows beta^k = m_k G_k^T G_k u of the group coefficients."""
        projected = self.whitening @ u
        betas = np.zeros((self.K, self.L))
        np.add.at(betas, self.row_group, self.whitening * projected[:, None])
        return betas * np.asarray(m, dtype=float)[:, None]

    def information(self, m) -> "Information":
        """Triangular root of Psi(m), restricted to the covered levels."""
        m = np.asarray(m, dtype=float)
        if m.shape != (self.K,):
            raise ValueError(f"Expected {self.K} sample counts, got shape {m.shape}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("Sample counts must be finite and nonnegative")

        covered = np.flatnonzero(self.membership[m > 0].any(axis=0))
        if covered.size == 0:
            raise InfeasibleTarget("No group has a positive sample count")

        scale = np.sqrt(m)[self.row_group]
        rows = scale > 0
        stacked = self.whitening[rows][:, covered] * scale[rows, None]
        root = np.linalg.qr(stacked, mode="r")
        # Floored groups make tiny but genuine pivots, only exact zeros are singular
        if root.shape[0] < covered.size or not np.all(np.abs(np.diag(root)) > 0.0):
            raise NumericalFailure("Information matrix Psi(m) is singular")
        return Information(readonly(root), covered, self.L)


@dataclass(frozen=True, eq=False)
class Information:
    """
    Square-root form of Psi(m) on the covered levels.

    Attributes:
        root (np.ndarray): Upper-triangular R with Psi_cc = R^T R
        covered (np.ndarray): Zero-based covered levels
        L (int): Number of levels
    """
    root: np.ndarray
    covered: np.ndarray
    L: int

    def matrix(self) -> np.ndarray:
        """Dense Psi(m), zero on uncovered levels."""
        psi = np.zeros((self.L, self.L))
        psi[np.ix_(self.covered, self.covered)] = self.root.T @ self.root
        return psi

    def restrict(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.L,):
            raise ValueError(f"Expected a vector of length {self.L}, got shape {rhs.shape}")
        uncovered = np.setdiff1d(np.arange(self.L), self.covered)
        if np.any(rhs[uncovered] != 0.0):
            levels = [int(i) + 1 for i in uncovered if rhs[i] != 0.0]
            raise InfeasibleTarget(f"Levels {levels} are needed but no sampled group covers them")
        return rhs[self.covered]

    def solve(self, rhs) -> np.ndarray:
        """
        Solve Psi(m) u = rhs on the covered levels.

        Returns:
            np.ndarray: u, length L, zero on uncovered levels

        Raises:
            InfeasibleTarget: If rhs is nonzero on an uncovered level
            NumericalFailure: If the residual check fails
        """
        rhs_c = self.restrict(rhs)
        u_c = solve_triangular(self.root, solve_triangular(self.root, rhs_c, trans="T"))
        residual = self.root.T @ (self.root @ u_c) - rhs_c
        scale = np.linalg.norm(self.root, 2) ** 2 * np.linalg.norm(u_c) + np.linalg.norm(rhs_c)
        if np.linalg.norm(residual) > RESIDUAL_TOLERANCE * scale:
            raise NumericalFailure("Normal equations failed the residual check")
        u = np.zeros(self.L)
        u[self.covered] = u_c
        return u

    def variance(self, alpha) -> float:
        """alpha^T Psi(m)^-1 alpha as ||R^-T alpha||^2."""
        z = solve_triangular(self.root, self.restrict(alpha), trans="T")
        return float(z @ z)


def group_factors(system: Groups, C: Covariance) -> GroupFactors:
    """
    Factor the covariance of every group.

    Args:
        system: A GroupSystem or a sequence of groups
        C: MomentData (preferred, carries the latent factor) or a covariance

    Returns:
        GroupFactors: Whitened blocks of all groups

    Raises:
        NumericalFailure: If some C^k is singular; the message names the group
    """
    moments = as_moments(C)
    groups = _groups_of(system)
    L = moments.L

    blocks, owners, conditions = [], [], []
    membership = np.zeros((len(groups), L), dtype=bool)
    for k, group in enumerate(groups):
        if group.indices[-1] > L:
            raise ValueError(f"Group {group} refers to a level beyond L = {L}")
        positions = group.positions
        membership[k, positions] = True

        R = np.linalg.qr(moments.factor[positions].T, mode="r")
        if R.shape[0] < group.size or _singular_pivots(R):
            raise NumericalFailure(f"Covariance of group {group} is singular")
        R = R * np.sign(np.diag(R))[:, None]

        conditions.append(np.linalg.cond(R) ** 2)

        block = np.zeros((group.size, L))
        block[:, positions] = solve_triangular(R, np.eye(group.size), trans="T")
        blocks.append(block)
        owners.extend([k] * group.size)

    conditions = np.array(conditions)
    flagged = int(np.sum(conditions > CONDITION_WARNING))
    if flagged:
        logger.warning(
            "%d of %d groups have ill-conditioned covariances (max cond ~ %.1e)",
            flagged, len(groups), conditions.max(),
        )

    return GroupFactors(
        groups=groups,
        L=L,
        whitening=readonly(np.vstack(blocks)),
        row_group=np.array(owners, dtype=int),
        membership=membership,
        conditions=conditions,
    )


def assemble_psi(system: Groups, C: Covariance, m) -> np.ndarray:
    """
    The information operator Psi(m) = sum_k m_k P^k (C^k)^-1 R^k.

    Args:
        system: Groups of the block linear model
        C: Moments or covariance of the models
        m: Sample counts per group

    Returns:
        np.ndarray: Symmetric positive semidefinite (L, L) matrix

    Raises:
        NumericalFailure: If a sampled group has a singular covariance
    """
    groups = _groups_of(system)
    m = np.asarray(m, dtype=float)
    if m.shape != (len(groups),):
        raise ValueError(f"Expected {len(groups)} sample counts, got shape {m.shape}")
    active = [g for g, count in zip(groups, m) if count > 0]
    moments = as_moments(C)
    if not active:
        return np.zeros((moments.L, moments.L))

    factors = group_factors(active, moments)
    scaled = factors.whitening * np.sqrt(m[m > 0])[factors.row_group][:, None]
    psi = scaled.T @ scaled
    return 0.5 * (psi + psi.T)


def blue_variance(psi: np.ndarray, alpha) -> float:
    """
    Variance alpha^T Psi^-1 alpha of the BLUE.

    Levels whose row and column of Psi vanish are dropped; alpha must be
    zero there.

    Raises:
        NumericalFailure: If Psi is not symmetric positive definite or the
            solve fails its residual check
        InfeasibleTarget: If alpha is nonzero on a dropped level
    """
    psi = np.asarray(psi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    scale = max(np.max(np.abs(psi)), np.finfo(float).tiny)
    if not np.allclose(psi, psi.T, rtol=0.0, atol=1e-12 * scale):
        raise NumericalFailure("Psi is not symmetric")

    covered = np.flatnonzero(np.any(psi != 0.0, axis=0))
    uncovered = np.setdiff1d(np.arange(psi.shape[0]), covered)
    if np.any(alpha[uncovered] != 0.0):
        raise InfeasibleTarget("Bias vector touches levels without information")
    block = psi[np.ix_(covered, covered)]
    rhs = alpha[covered]
    try:
        factor = cho_factor(block)
    except np.linalg.LinAlgError:
        raise NumericalFailure("Psi is not positive definite") from None

    u = cho_solve(factor, rhs)
    residual = block @ u - rhs
    if np.linalg.norm(residual) > RESIDUAL_TOLERANCE * (np.linalg.norm(block, 2) * np.linalg.norm(u) + np.linalg.norm(rhs)):
        raise NumericalFailure("Normal equations failed the residual check")
    return float(rhs @ u)


def blue_point_estimate(system: Groups, C: Covariance, samples: Sequence[np.ndarray], alpha, m=None) -> float:
    """
    The estimate alpha^T mu_hat from sampled group evaluations.

    Args:
        system: Groups of the block linear model
        C: Moments or covariance of the models
        samples: Per group an (m_k, |S^k|) array of evaluations; groups
            without samples pass an empty (0, |S^k|) array
        alpha: Bias vector
        m: Optional expected sample counts, checked against ``samples``

    Returns:
        float: The BLUE estimate

    Raises:
        ValueError: If the samples do not match the groups or the counts
    """
    groups = _groups_of(system)
    if len(samples) != len(groups):
        raise ValueError(f"Expected samples for {len(groups)} groups, got {len(samples)}")

    counts = np.zeros(len(groups))
    sums = np.zeros((len(groups), as_moments(C).L))
    for k, (group, values) in enumerate(zip(groups, samples)):
        values = np.asarray(values, dtype=float).reshape(-1, group.size)
        counts[k] = values.shape[0]
        sums[k, group.positions] = values.sum(axis=0)
    if m is not None and not np.array_equal(counts, np.asarray(m, dtype=float)):
        raise ValueError(f"Sample counts {counts.tolist()} do not match {list(m)}")

    sampled = _sampled(groups, counts)
    factors = group_factors([g for g, s in zip(groups, sampled) if s], C)
    info = factors.information(counts[sampled])
    # y(m) = sum_k G_k^T G_k P^k (sum of the group's evaluations)
    projected = np.sum(factors.whitening * sums[sampled][factors.row_group], axis=1)
    y = factors.whitening.T @ projected
    alpha_c = info.restrict(alpha)
    mu_hat = info.solve(y)
    return float(alpha_c @ mu_hat[info.covered])


def extract_beta(system: Groups, C: Covariance, m, alpha) -> np.ndarray:
    """
    Per-group coefficients beta^k = m_k P^k (C^k)^-1 R^k Psi(m)^-1 alpha.

    Returns:
        np.ndarray: (K, L) array with beta^k as rows; zero rows for m_k = 0

    Groups without samples are not factored, so their covariance may be
    singular.
    """
    groups = _groups_of(system)
    m = np.asarray(m, dtype=float)
    sampled = _sampled(groups, m)
    factors = group_factors([g for g, s in zip(groups, sampled) if s], C)
    u = factors.information(m[sampled]).solve(alpha)
    betas = np.zeros((len(groups), factors.L))
    betas[sampled] = factors.betas(m[sampled], u)
    return betas

"""
Model Groups

A model group S is a nonempty set of levels whose models are evaluated on the
same random event. A group system collects the groups an estimator may draw
samples from, together with their evaluation costs W_k and the coupling
bound q on the group size.

Groups are kept in canonical order: by size, then lexicographically. For
L = 3 and q = 2 this gives

    {1}, {2}, {3}, {1,2}, {1,3}, {2,3}

In CSV files a group is written as its levels joined by semicolons ("1;3").

Restriction R^k picks the coordinates of a group out of a length-L vector,
prolongation P^k = (R^k)^T scatters them back with zeros elsewhere.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, NewType, Optional, Sequence, Tuple

import numpy as np

from ..family.cost import CostModel
from ..family.moments import readonly


logger = logging.getLogger(__name__)

# Enumeration is exponential in L
MAX_LEVELS = 20

# Semicolon-joined group label, e.g. "1;3;4"
GroupLabel = NewType("GroupLabel", str)


@dataclass(frozen=True)
class ModelGroup:
    """
    A set of levels evaluated on a shared event.

    Attributes:
        indices (Tuple[int, ...]): Strictly increasing levels, counted from 1

    Examples:
        ModelGroup((1, 3)).label -> "1;3"
    """
    indices: Tuple[int, ...]

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", indices)
        if not indices:
            raise ValueError("A model group cannot be empty")
        if indices[0] < 1:
            raise ValueError(f"Levels start at 1, got {indices}")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"Group levels must be strictly increasing, got {indices}")

    @classmethod
    def of(cls, *levels: int) -> "ModelGroup":
        return cls(tuple(sorted(levels)))

    @classmethod
    def from_label(cls, label: str) -> "ModelGroup":
        return cls(tuple(int(part) for part in label.split(";")))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def label(self) -> GroupLabel:
        return GroupLabel(";".join(str(i) for i in self.indices))

    @property
    def positions(self) -> np.ndarray:
        """Zero-based array positions of the group's levels."""
        return np.array(self.indices) - 1

    def __str__(self) -> str:
        return "{" + ",".join(str(i) for i in self.indices) + "}"


@dataclass(frozen=True, eq=False)
class GroupSystem:
    """
    The groups available to an estimator.

    Attributes:
        groups (Tuple[ModelGroup, ...]): Pairwise distinct groups
        costs (np.ndarray): Cost W_k of one event of each group
        coupling (int): Upper bound q on the group size
        L (int): Number of levels
    """
    groups: Tuple[ModelGroup, ...]
    costs: np.ndarray
    coupling: int
    L: int

    def __post_init__(self):
        groups = tuple(self.groups)
        costs = np.array(self.costs, dtype=float)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "costs", readonly(costs))
        if not groups:
            raise ValueError("A group system needs at least one group")
        if len(set(groups)) != len(groups):
            raise ValueError("Groups of a system must be pairwise distinct")
        if costs.shape != (len(groups),):
            raise ValueError(f"Expected {len(groups)} group costs, got shape {costs.shape}")
        if np.any(costs <= 0):
            raise ValueError("Group costs must be positive")
        for group in groups:
            if group.size > self.coupling:
                raise ValueError(f"Group {group} exceeds the coupling bound {self.coupling}")
            if group.indices[-1] > self.L:
                raise ValueError(f"Group {group} refers to a level beyond L = {self.L}")

    def __len__(self) -> int:
        return len(self.groups)

    def index(self, group: ModelGroup) -> int:
        return self.groups.index(group)

    def find(self, group: ModelGroup) -> Optional[int]:
        try:
            return self.groups.index(group)
        except ValueError:
            return None

    def singleton(self, level: int) -> Optional[int]:
        """Index of the group {level}, or None."""
        return self.find(ModelGroup((level,)))


def group_cost(group: ModelGroup, cost: CostModel) -> float:
    """
    Cost of one event of a group, the sum of its models' costs.

    Examples:
        group_cost({1,2}) with table costs (1, 4) -> 5
    """
    return float(sum(cost.level_cost(level) for level in group.indices))


def build_system(
    groups: Iterable[ModelGroup],
    cost: CostModel,
    L: int,
    coupling: Optional[int] = None,
) -> GroupSystem:
    """Group system for an explicit list of groups, kept in the given order."""
    groups = tuple(groups)
    if coupling is None:
        coupling = max(group.size for group in groups)
    return GroupSystem(groups, [group_cost(g, cost) for g in groups], coupling, L)


def enumerate_groups(L: int, q: Optional[int], cost: CostModel) -> GroupSystem:
    """
    All groups of at most q levels out of 1..L, in canonical order.

    Args:
        L (int): Number of levels, 1 <= L <= 20
        q (Optional[int]): Coupling bound; None means unbounded (q = L)
        cost (CostModel): Per-level costs

    Returns:
        GroupSystem: sum_{j <= min(q, L)} binom(L, j) groups

    Raises:
        ValueError: If L is out of range or q < 1
    """
    if L < 1:
        raise ValueError(f"Number of levels must be at least 1, got {L}")
    if L > MAX_LEVELS:
        raise ValueError(f"Refusing to enumerate groups for L = {L} > {MAX_LEVELS}")
    if q is None:
        q = L
    if q < 1:
        raise ValueError(f"Coupling bound must be at least 1, got {q}")
    q = min(q, L)

    groups = [
        ModelGroup(indices)
        for size in range(1, q + 1)
        for indices in itertools.combinations(range(1, L + 1), size)
    ]
    logger.debug("Enumerated %d groups for L=%d, q=%d", len(groups), L, q)
    return build_system(groups, cost, L, q)


def principal_submatrix(C: np.ndarray, group: ModelGroup) -> np.ndarray:
    """The covariance C^k of the models in a group."""
    positions = group.positions
    return np.asarray(C)[np.ix_(positions, positions)]


def restrict(v: Sequence[float], group: ModelGroup) -> np.ndarray:
    """R^k v: the entries of v on the group's levels."""
    return np.asarray(v, dtype=float)[group.positions]


def prolong(v_group: Sequence[float], group: ModelGroup, L: int) -> np.ndarray:
    """P^k v_S: a length-L vector equal to v_S on the group and zero elsewhere."""
    v_group = np.asarray(v_group, dtype=float)
    if v_group.shape != (group.size,):
        raise ValueError(f"Expected {group.size} entries for group {group}, got {v_group.shape}")
    if group.indices[-1] > L:
        raise ValueError(f"Group {group} does not fit into {L} levels")
    v = np.zeros(L)
    v[group.positions] = v_group
    return v

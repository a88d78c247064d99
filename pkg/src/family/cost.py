"""
Per-Level Cost Models

This module defines how much one evaluation of the level-l model costs, in
abstract work units. Two modes are supported:

- geometric: w_l = w0 * 2^(l * gamma_cost), the usual multilevel assumption
  where each refinement multiplies the cost by a fixed factor
- table: w_l is read from an explicit list, one entry per level

Examples:
    CostModel.geometric(1e-6, 6).level_cost(1) -> 6.4e-05
    CostModel.geometric(0.25, 2) gives the costs 4^(l-1) = 1, 4, 16, ...
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


GEOMETRIC = "geometric"
TABLE = "table"
COST_MODES = (GEOMETRIC, TABLE)


@dataclass(frozen=True)
class CostModel:
    """
    Cost of evaluating a single model on each level.

    Attributes:
        mode (str): Either "geometric" or "table"
        w0 (float): Base cost of the geometric mode
        gamma_cost (float): Cost growth rate of the geometric mode
        table (Tuple[float, ...]): Per-level costs w_1..w_L of the table mode
    """
    mode: str
    w0: float = 1.0
    gamma_cost: float = 0.0
    table: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in COST_MODES:
            raise ValueError(f"Unknown cost mode: {self.mode}")
        if self.mode == GEOMETRIC:
            if not self.w0 > 0:
                raise ValueError(f"Base cost must be positive, got {self.w0}")
        else:
            object.__setattr__(self, "table", tuple(float(w) for w in self.table))
            if not self.table:
                raise ValueError("Table cost mode needs at least one entry")
            if any(not w > 0 for w in self.table):
                raise ValueError(f"Level costs must be positive, got {self.table}")

    @classmethod
    def geometric(cls, w0: float, gamma_cost: float) -> "CostModel":
        return cls(GEOMETRIC, w0=float(w0), gamma_cost=float(gamma_cost))

    @classmethod
    def from_table(cls, table: Sequence[float]) -> "CostModel":
        return cls(TABLE, table=tuple(table))

    @property
    def max_level(self) -> Optional[int]:
        """Highest level the model can price, or None if unbounded."""
        return len(self.table) if self.mode == TABLE else None

    def level_cost(self, level: int) -> float:
        """
        Cost of one evaluation of the level-``level`` model.

        Args:
            level (int): Level index, starting at 1

        Returns:
            float: w_level in work units

        Raises:
            ValueError: If the level is below 1 or beyond the cost table
        """
        if level < 1 or (self.max_level is not None and level > self.max_level):
            raise ValueError(f"Level {level} out of range for {self.mode} cost model")
        if self.mode == GEOMETRIC:
            return self.w0 * 2.0 ** (level * self.gamma_cost)
        return self.table[level - 1]

    def costs(self, L: int) -> np.ndarray:
        """Vector of the costs w_1..w_L."""
        return np.array([self.level_cost(level) for level in range(1, L + 1)])


def level_cost(cost: CostModel, level: int, L: Optional[int] = None) -> float:
    """
    Cost of the level-``level`` model, optionally checked against L levels.

    Raises:
        ValueError: If the level lies outside 1..L or outside the cost table
    """
    if L is not None and level > L:
        raise ValueError(f"Level {level} exceeds the number of levels {L}")
    return cost.level_cost(level)

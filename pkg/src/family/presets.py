"""
Built-in Model Families and Cost Models

Named presets used by the studies and selectable from the run configuration:

- "toy-exp": the covariance Q_ij = exp(-|i - j|) of the academic toy model
- toy_family / toy_cost: the four-level toy model with rates (0, 1, 2, 3),
  noise 0.1 at rate 3 and artificial costs 4^(l-1)
- synthetic_family / synthetic_cost: a family with rates (0, 2, 4) and a
  nonzero mean, standing in for the elliptic PDE hierarchy of the
  complexity study, priced at w_l = 1e-6 * 2^(6 l)
"""

from typing import Callable, Dict

import numpy as np

from .cost import CostModel
from .model_family import ExpansionFamily, RateVector


def toy_exp_q(n: int) -> np.ndarray:
    """Covariance Q_ij = exp(-|i - j|) of size n x n."""
    index = np.arange(n)
    return np.exp(-np.abs(index[:, None] - index[None, :]))


# Preset name -> builder of an n x n covariance
Q_PRESETS: Dict[str, Callable[[int], np.ndarray]] = {
    "toy-exp": toy_exp_q,
}

TOY_RATES = RateVector((0, 1, 2, 3), 2)
SYNTHETIC_RATES = RateVector((0, 2, 4), 6)


def q_preset(name: str, n: int) -> np.ndarray:
    if name not in Q_PRESETS:
        raise ValueError(f"Unknown Q preset: {name}")
    return Q_PRESETS[name](n)


def toy_family(ell0: float = 0.0, L: int = 4, mean=None) -> ExpansionFamily:
    """The academic toy model, mean zero unless a mean is given."""
    return ExpansionFamily(
        L=L,
        rates=TOY_RATES,
        Q=toy_exp_q(4),
        mean=mean,
        noise_scale=0.1,
        noise_rate=3.0,
        ell0=ell0,
    )


def toy_cost() -> CostModel:
    """Artificial toy model costs 4^(l - 1)."""
    return CostModel.geometric(0.25, 2.0)


def synthetic_family(L: int = 8, ell0: float = 0.0, mean=(1.0, 1.0, 1.0)) -> ExpansionFamily:
    """Biased family with rates (0, 2, 4); bias of Z_l decays like 4^-l."""
    return ExpansionFamily(
        L=L,
        rates=SYNTHETIC_RATES,
        Q=toy_exp_q(3),
        mean=mean,
        noise_scale=0.1,
        noise_rate=4.0,
        ell0=ell0,
    )


def synthetic_cost(gamma_cost: float = 6.0) -> CostModel:
    return CostModel.geometric(1e-6, gamma_cost)

"""
Coupled Path Sampling

Draws coupled model evaluations from an expansion family. One event draws
the latent vector (Z, c_2, ..., c_q) and the level noises xi_1..xi_L once;
every model evaluated on that event uses the same draw.

Random streams are counter based: the stream for a block of events is a
Philox generator keyed by (seed, *key), so any block can be regenerated in
isolation and blocks may be drawn in any order or in parallel.
"""

from typing import Tuple

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .model_family import ExpansionFamily


# Number of path records per counter block of sample_paths
PATH_BLOCK = 4096

# First component of the stream key, one namespace per consumer
PATH_STREAM = 0
SIMULATION_STREAM = 1


def event_stream(seed: int, *key: int) -> Generator:
    """Independent generator for the counter ``key`` under ``seed``."""
    return Generator(Philox(SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def draw_events(family: ExpansionFamily, rng: Generator, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw ``count`` independent coupled events.

    Args:
        family (ExpansionFamily): The model family
        rng (Generator): Source of randomness, consumed in a fixed order
        count (int): Number of events

    Returns:
        Tuple[np.ndarray, np.ndarray]: The truth Z, shape (count,), and the
        model values Z_1..Z_L on the same events, shape (count, L)
    """
    latent = family.mean + rng.standard_normal((count, family.q_exp)) @ family.q_root.T
    noise = rng.standard_normal((count, family.L))
    levels = latent @ family.weights().T + noise * family.noise_sd()
    return latent[:, 0], levels


def sample_paths(family: ExpansionFamily, seed: int, n: int, start: int = 0) -> np.ndarray:
    """
    Generate n coupled path records (Z, Z_1, ..., Z_L).

    Record i is a function of (seed, i) only, so ``start`` selects a window
    of the same infinite sequence of records.

    Args:
        family (ExpansionFamily): The model family
        seed (int): Root seed
        n (int): Number of records, at least 1
        start (int): Index of the first record

    Returns:
        np.ndarray: Records as rows, shape (n, L + 1)

    Raises:
        ValueError: If n < 1 or start < 0
    """
    if n < 1:
        raise ValueError(f"Number of records must be at least 1, got {n}")
    if start < 0:
        raise ValueError(f"Start index must be nonnegative, got {start}")

    records = np.empty((n, family.L + 1))
    stop = start + n
    for block in range(start // PATH_BLOCK, (stop - 1) // PATH_BLOCK + 1):
        truth, levels = draw_events(family, event_stream(seed, PATH_STREAM, block), PATH_BLOCK)
        first = block * PATH_BLOCK
        lo, hi = max(start, first), min(stop, first + PATH_BLOCK)
        records[lo - start:hi - start, 0] = truth[lo - first:hi - first]
        records[lo - start:hi - start, 1:] = levels[lo - first:hi - first]
    return records

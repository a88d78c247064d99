"""
Estimator Simulation

Runs an estimator scheme on sampled coupled paths and compares the empirical
mean, variance and MSE over R independent replications with the analytic
values from the moments of the family.

One replication evaluates, for every group S^k, m_k independent events and
on each event all models of S^k from the same latent draw. The groups are
independent of each other and of every other replication.

Replications are processed in blocks. The m_k * size events of group k in
block b are drawn in chunks of at most SIMULATION_CHUNK events, chunk c coming
from the counter stream (seed, SIMULATION_STREAM, k, b, c). A block can be
recomputed in isolation and the result does not depend on the thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..blue.scheme import EstimatorScheme, scheme_variance
from ..family.model_family import ExpansionFamily, family_moments
from ..family.sampler import SIMULATION_STREAM, draw_events, event_stream


logger = logging.getLogger(__name__)

# Replications per counter block
SIMULATION_BLOCK = 1024

# Events drawn at once for one group
SIMULATION_CHUNK = 65536


@dataclass(frozen=True)
class SimulationReport:
    """
    Empirical against analytic behaviour of one scheme.

    Attributes:
        estimator (str): Scheme name
        R (int): Number of replications
        mean (float): Empirical mean of the estimates
        variance (float): Empirical variance of the estimates
        analytic_variance (float): sum_k beta^k^T C beta^k / m_k
        target (float): alpha^T mu, the expected estimate
        z_score (float): (mean - target) / sqrt(analytic_variance / R)
        variance_ratio (float): variance / analytic_variance
    """
    estimator: str
    R: int
    mean: float
    variance: float
    analytic_variance: float
    target: float
    z_score: float
    variance_ratio: float


@dataclass(frozen=True)
class MSEReport:
    """
    Empirical against analytic mean square error towards E[Z].

    Attributes:
        estimator (str): Scheme name
        R (int): Number of replications
        mse (float): Mean of (estimate - E[Z])^2
        mse_stderr (float): Standard error of ``mse``
        analytic_mse (float): bias^2 + analytic variance
        bias (float): alpha^T mu - E[Z]
        simulation (SimulationReport): The underlying mean/variance report
    """
    estimator: str
    R: int
    mse: float
    mse_stderr: float
    analytic_mse: float
    bias: float
    simulation: SimulationReport


def _integer_counts(scheme: EstimatorScheme) -> np.ndarray:
    if np.any(scheme.m != np.round(scheme.m)):
        raise ValueError(f"Scheme {scheme.name} has non-integer sample counts, round it first")
    return scheme.m.astype(int)


def _simulate_block(scheme: EstimatorScheme, counts: np.ndarray, family: ExpansionFamily, seed: int, chunk: int, block: int, size: int) -> np.ndarray:
    """Estimates of ``size`` consecutive replications starting at block ``block``."""
    estimates = np.zeros(size)
    for k, (group, beta, m) in enumerate(zip(scheme.groups, scheme.betas, counts)):
        if m == 0:
            continue
        weights = beta[group.positions]
        sums = np.zeros(size)
        total = size * m
        # event e belongs to replication e // m of the block
        for c, start in enumerate(range(0, total, chunk)):
            n = min(chunk, total - start)
            _, levels = draw_events(family, event_stream(seed, SIMULATION_STREAM, k, block, c), n)
            owner = np.arange(start, start + n) // m
            sums += np.bincount(owner, weights=levels[:, group.positions] @ weights, minlength=size)
        estimates += sums / m
    return estimates


def _estimates(scheme: EstimatorScheme, family: ExpansionFamily, seed: int, R: int, threads: int, block: int, chunk: int) -> np.ndarray:
    counts = _integer_counts(scheme)
    blocks = [(b, min(block, R - b * block)) for b in range(math.ceil(R / block))]
    run = lambda task: _simulate_block(scheme, counts, family, seed, chunk, *task)
    if threads <= 1:
        parts = [run(task) for task in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    return np.concatenate(parts)


def _check(scheme: EstimatorScheme, family: ExpansionFamily, R: int, block: int, chunk: int):
    if R < 2:
        raise ValueError(f"Need at least 2 replications, got {R}")
    if block < 1:
        raise ValueError(f"Block size must be at least 1, got {block}")
    if chunk < 1:
        raise ValueError(f"Chunk size must be at least 1, got {chunk}")
    if scheme.L > family.L:
        raise ValueError(f"Scheme needs {scheme.L} levels, family has {family.L}")


def _report(scheme: EstimatorScheme, family: ExpansionFamily, estimates: np.ndarray) -> SimulationReport:
    R = estimates.size
    moments = family_moments(family).truncate(scheme.L)
    mean = math.fsum(estimates) / R
    variance = math.fsum((estimates - mean) ** 2) / (R - 1)
    analytic = scheme_variance(scheme, moments)
    target = float(scheme.alpha @ moments.mu)

    if analytic > 0:
        z_score = (mean - target) / math.sqrt(analytic / R)
        ratio = variance / analytic
    else:
        z_score = 0.0 if mean == target else math.copysign(math.inf, mean - target)
        ratio = math.nan
    return SimulationReport(scheme.name, R, mean, variance, analytic, target, z_score, ratio)


def run_estimator(
    scheme: EstimatorScheme,
    family: ExpansionFamily,
    seed: int,
    R: int,
    threads: int = 1,
    block: int = SIMULATION_BLOCK,
    chunk: int = SIMULATION_CHUNK,
) -> SimulationReport:
    """
    Simulate R replications of a scheme.

    Args:
        scheme (EstimatorScheme): Scheme with integer sample counts
        family (ExpansionFamily): Family providing the coupled events
        seed (int): Root seed
        R (int): Replications, at least 2
        threads (int): Worker threads; the result does not depend on it
        block (int): Replications per counter block
        chunk (int): Events per draw; bounds the memory of one group in a block

    Returns:
        SimulationReport: Empirical and analytic mean and variance

    Raises:
        ValueError: On non-integer counts, R < 2 or too few family levels
    """
    _check(scheme, family, R, block, chunk)
    logger.info("Simulating %s: %d replications, %d groups", scheme.name, R, scheme.K)
    return _report(scheme, family, _estimates(scheme, family, seed, R, threads, block, chunk))


def mse_report(
    scheme: EstimatorScheme,
    family: ExpansionFamily,
    seed: int,
    R: int,
    threads: int = 1,
    block: int = SIMULATION_BLOCK,
    chunk: int = SIMULATION_CHUNK,
) -> MSEReport:
    """
    Empirical MSE towards E[Z] next to bias^2 + variance.

    Uses the same replications as run_estimator with the same arguments.
    """
    _check(scheme, family, R, block, chunk)
    estimates = _estimates(scheme, family, seed, R, threads, block, chunk)
    simulation = _report(scheme, family, estimates)

    truth = family_moments(family).truth_mean
    squared = (estimates - truth) ** 2
    mse = math.fsum(squared) / R
    stderr = math.sqrt(math.fsum((squared - mse) ** 2) / (R - 1) / R)
    bias = simulation.target - truth
    logger.info("MSE of %s: %.6e (analytic %.6e)", scheme.name, mse, bias ** 2 + simulation.analytic_variance)
    return MSEReport(scheme.name, R, mse, stderr, bias ** 2 + simulation.analytic_variance, bias, simulation)

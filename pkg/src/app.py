"""
Multilevel BLUE Toolkit - Command Line Interface
A batch front end that reads a TOML run document, runs one study command and
writes its results as CSV files.

Commands:
- moments: means and covariance of the model family
- allocate: continuous and rounded sample counts per estimator at a budget
- schemes: RE coefficient vectors and the coefficients of every estimator
- sweep: cost against accuracy with fitted slopes
- convergence: distance of the optimal BLUE to RE as ell0 grows
- simulate: empirical against analytic mean, variance and MSE

Usage:
    python -m src.app allocate --config run.toml --out results

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 infeasible target. Failures print one line ``error=<tag> detail=<message>``
to stderr.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .artifacts import writer
from .artifacts.config import RunConfig, load_config
from .blue.errors import BlueError, ConfigError, InfeasibleTarget, NumericalFailure
from .blue.extrapolation import re_vectors
from .family.model_family import family_moments
from .study.analysis import convergence_slopes, convergence_study, cost_sweep
from .study.estimators import design_at_budget, round_design
from .study.simulation import mse_report


logger = logging.getLogger(__name__)

EXIT_CODES = {ConfigError: 1, NumericalFailure: 2, InfeasibleTarget: 3}


def _require(config: RunConfig, key: str, command: str):
    value = getattr(config.run, key)
    if value is None or value == ():
        raise ConfigError(f"run.{key}", f"required by the {command} command")
    return value


def _require_estimators(config: RunConfig, command: str):
    if not config.estimators:
        raise ConfigError("estimators", f"the {command} command needs at least one estimator")
    return config.estimators


def _designs(config: RunConfig, budget: float):
    """Continuous and rounded design of every configured estimator."""
    moments = family_moments(config.family)
    L = config.family.L
    for spec in config.estimators:
        design = design_at_budget(spec, moments, config.cost, config.family.rates, L, budget)
        yield design, round_design(design, moments, config.run.rounding)


def cmd_moments(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    Write the exact moments of the configured family.

    Returns:
        List[Path]: moments.csv
    """
    return [writer.write_moments(out / "moments.csv", family_moments(config.family))]


def cmd_allocate(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    Allocate the budget for every estimator.

    Returns:
        List[Path]: allocation_<estimator>.csv per estimator and allocation_summary.csv
    """
    budget = _require(config, "budget", "allocate")
    _require_estimators(config, "allocate")
    paths, summary = [], []
    for design, rounded in _designs(config, budget):
        name = design.spec.name
        paths.append(writer.write_allocation(out / f"allocation_{name}.csv", design.scheme.groups, design.alloc, rounded.alloc))
        summary.append((name, design.alloc, rounded.alloc))
        logger.info("%s: %d active groups, variance %.6e", name, int(np.sum(design.alloc.m > 0)), design.variance)
    paths.append(writer.write_summary(out / "allocation_summary.csv", summary))
    return paths


def cmd_schemes(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    Export RE coefficient vectors and estimator coefficients.

    The coefficients are those of the continuous design at run.budget, or at
    unit budget when none is configured.

    Returns:
        List[Path]: re_vectors.csv and scheme_<estimator>.csv per estimator
    """
    rates, L = config.family.rates, config.family.L
    orders = [re_vectors(L, rates, q) for q in range(2, rates.order + 1)]
    paths = [writer.write_re_vectors(out / "re_vectors.csv", orders)] if orders else []
    if config.estimators:
        for design, _ in _designs(config, config.run.budget or 1.0):
            paths.append(writer.write_scheme(out / f"scheme_{design.spec.name}.csv", design.scheme))
    return paths


def cmd_sweep(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    Cost sweep over run.eps_grid, or over run.levels with run.sweep_mode = "levels".

    Returns:
        List[Path]: sweep.csv and slopes.csv
    """
    specs = _require_estimators(config, "sweep")
    run = config.run
    if run.sweep_mode == "levels":
        result = cost_sweep(config.family, config.cost, specs, levels=_require(config, "levels", "sweep"),
                            rounding=run.rounding, threads=threads)
    else:
        grid = run.eps_grid or ((run.eps,) if run.eps is not None else ())
        if not grid:
            raise ConfigError("run.eps_grid", "required by the sweep command")
        result = cost_sweep(config.family, config.cost, specs, eps_grid=grid, rounding=run.rounding, threads=threads)
    return [
        writer.write_sweep(out / "sweep.csv", result.records),
        writer.write_slopes(out / "slopes.csv", result.slopes),
    ]


def cmd_convergence(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    RE against optimal BLUE over run.ell0_range and run.coupling_range.

    Returns:
        List[Path]: convergence.csv and convergence_slopes.csv
    """
    budget = _require(config, "budget", "convergence")
    points = convergence_study(config.family, config.cost, config.run.coupling_range, config.run.ell0_range, budget, threads)
    return [
        writer.write_convergence(out / "convergence.csv", points),
        writer.write_slopes(out / "convergence_slopes.csv", convergence_slopes(points)),
    ]


def cmd_simulate(config: RunConfig, out: Path, threads: int) -> List[Path]:
    """
    Simulate every estimator run.replications times.

    Estimators use the rounded allocation at run.budget; run.counts replaces
    the counts of fixed-coefficient schemes instead.

    Returns:
        List[Path]: simulate.csv
    """
    _require_estimators(config, "simulate")
    run = config.run
    reports = []
    if run.counts is not None:
        L = config.family.L
        for spec in config.estimators:
            scheme = spec.scheme(L, config.family.rates)
            if scheme is None:
                raise ConfigError("run.counts", f"{spec.name} has no fixed coefficients, use run.budget")
            if len(run.counts) not in (1, scheme.K):
                raise ConfigError("run.counts", f"{spec.name} has {scheme.K} groups, got {len(run.counts)} counts")
            scheme = scheme.with_counts(np.broadcast_to(np.array(run.counts, dtype=float), (scheme.K,)))
            reports.append(mse_report(scheme, config.family, run.seed, run.replications, threads))
    else:
        budget = _require(config, "budget", "simulate")
        for _, rounded in _designs(config, budget):
            if not rounded.alloc.integral:
                raise ConfigError("run.rounding", "simulation needs integer counts, use rounding = \"ceil\"")
            reports.append(mse_report(rounded.scheme, config.family, run.seed, run.replications, threads))
    return [writer.write_simulation(out / "simulate.csv", reports)]


COMMANDS: Dict[str, Callable[[RunConfig, Path, int], List[Path]]] = {
    "moments": cmd_moments,
    "allocate": cmd_allocate,
    "schemes": cmd_schemes,
    "sweep": cmd_sweep,
    "convergence": cmd_convergence,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.app", description="Multilevel BLUE toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path, help="TOML run document")
    parser.add_argument("--out", default=Path("results"), type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads")
    parser.add_argument("--verbose", action="store_true", help="progress and debug logging")
    return parser


def log_level(verbose: bool) -> int:
    """Root log level: warnings only unless --verbose is given."""
    return logging.DEBUG if verbose else logging.WARNING


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv (Optional[Sequence[str]]): Arguments without the program name

    Returns:
        int: Process exit code
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=log_level(args.verbose),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.threads < 1:
            raise ConfigError("threads", f"must be at least 1, got {args.threads}")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed", f"must be nonnegative, got {args.seed}")
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        logger.info("Running %s with %s", args.command, args.config)
        paths = COMMANDS[args.command](config, args.out, args.threads)
    except BlueError as error:
        print(f"error={error.tag} detail={error}", file=sys.stderr)
        return EXIT_CODES.get(type(error), 1)
    except np.linalg.LinAlgError as error:
        print(f"error=numerical detail={error}", file=sys.stderr)
        return EXIT_CODES[NumericalFailure]
    except ValueError as error:
        print(f"error=config detail={error}", file=sys.stderr)
        return 1

    for path in paths:
        logger.info("Wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

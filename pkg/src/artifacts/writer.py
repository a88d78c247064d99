"""
CSV Artifacts

Writes the results of every command as plot-ready CSV files and reads them
back. All files have a header row, use '.' as decimal separator and print
floats with 17 significant digits, so a value read back is the value that
was written.

Model groups are written as their levels joined by semicolons:

    ModelGroup((1, 3, 4))  <->  "1;3;4"
"""

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from ..blue.allocation import Allocation
from ..blue.extrapolation import RECoefficients, sign_changes
from ..blue.groups import GroupLabel, ModelGroup
from ..blue.scheme import EstimatorScheme
from ..family.moments import MomentData
from ..study.analysis import ConvergencePoint, SlopeRecord, SweepRecord
from ..study.simulation import MSEReport


PathLike = Union[str, Path]

ALLOCATION_COLUMNS = ["group_id", "models", "m_continuous", "m_rounded", "W_k"]
SUMMARY_COLUMNS = ["estimator", "variance_continuous", "variance_rounded_predicted", "cost_continuous", "cost_rounded"]
SWEEP_COLUMNS = ["estimator", "eps", "L", "cost_continuous", "cost_rounded", "variance", "bias_sq", "mse"]
SLOPE_COLUMNS = ["estimator", "slope", "stderr"]
CONVERGENCE_COLUMNS = ["ell0", "q", "r_q", "e_q"]
SIMULATE_COLUMNS = ["estimator", "R", "mean_emp", "var_emp", "var_analytic", "mse_emp", "mse_analytic", "z_score"]


def format_float(value: float) -> str:
    return f"{float(value):.17g}"


def format_group(group: ModelGroup) -> GroupLabel:
    """Semicolon-joined levels, e.g. "1;3;4"."""
    return group.label


def parse_group(text: str) -> ModelGroup:
    """Inverse of format_group."""
    return ModelGroup.from_label(text)


def _level_columns(prefix: str, L: int) -> List[str]:
    return [f"{prefix}_{level}" for level in range(1, L + 1)]


def _write(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_moments(path: PathLike, moments: MomentData) -> Path:
    """One row per level: mu_l, the covariance row C_l and E[Z]."""
    header = ["level", "mu", *_level_columns("C", moments.L), "truth_mean"]
    rows = (
        [level + 1, float(moments.mu[level]), *map(float, moments.C[level]), float(moments.truth_mean)]
        for level in range(moments.L)
    )
    return _write(path, header, rows)


def write_allocation(path: PathLike, groups: Sequence[ModelGroup], continuous: Allocation, rounded: Allocation) -> Path:
    """Continuous and rounded counts per group with the group cost W_k."""
    rows = (
        [k + 1, format_group(group), float(m), float(r), float(w)]
        for k, (group, m, r, w) in enumerate(zip(groups, continuous.m, rounded.m, continuous.costs))
    )
    return _write(path, ALLOCATION_COLUMNS, rows)


def write_summary(path: PathLike, entries: Sequence[Tuple[str, Allocation, Allocation]]) -> Path:
    """One line per estimator: (name, continuous allocation, rounded allocation)."""
    rows = (
        [name, float(continuous.variance), float(rounded.variance), continuous.cost, rounded.cost]
        for name, continuous, rounded in entries
    )
    return _write(path, SUMMARY_COLUMNS, rows)


def write_re_vectors(path: PathLike, coefficients: Sequence[RECoefficients]) -> Path:
    """Rows (k, q, v_1..v_L) for k = 1..L of every order given."""
    L = max(c.L for c in coefficients)
    rows = []
    for c in coefficients:
        for k in range(1, c.L + 1):
            v = np.zeros(L)
            v[: c.L] = c.v(k)
            rows.append([k, c.order, *map(float, v)])
    return _write(path, ["k", "q", *_level_columns("v", L)], rows)


def write_scheme(path: PathLike, scheme: EstimatorScheme) -> Path:
    """
    Coefficient vectors of the groups a scheme uses.

    Groups with neither samples nor coefficients are left out; group_id is
    the position of the group in the scheme.
    """
    header = ["group_id", "models", *_level_columns("beta", scheme.L), "sign_changes"]
    rows = (
        [k + 1, format_group(group), *map(float, beta), sign_changes(beta, group)]
        for k, (group, beta, m) in enumerate(zip(scheme.groups, scheme.betas, scheme.m))
        if m > 0 or np.any(beta != 0.0)
    )
    return _write(path, header, rows)


def write_sweep(path: PathLike, records: Sequence[SweepRecord]) -> Path:
    rows = (
        [r.estimator, r.eps, r.L, r.cost_continuous, r.cost_rounded, r.variance, r.bias_sq, r.mse]
        for r in records
    )
    return _write(path, SWEEP_COLUMNS, rows)


def write_slopes(path: PathLike, slopes: Sequence[SlopeRecord]) -> Path:
    return _write(path, SLOPE_COLUMNS, ([s.estimator, s.slope, s.stderr] for s in slopes))


def write_convergence(path: PathLike, points: Sequence[ConvergencePoint]) -> Path:
    return _write(path, CONVERGENCE_COLUMNS, ([float(p.ell0), p.q, p.r, p.e] for p in points))


def write_simulation(path: PathLike, reports: Sequence[MSEReport]) -> Path:
    rows = (
        [r.estimator, r.R, r.simulation.mean, r.simulation.variance, r.simulation.analytic_variance,
         r.mse, r.analytic_mse, r.simulation.z_score]
        for r in reports
    )
    return _write(path, SIMULATE_COLUMNS, rows)


def read_rows(path: PathLike) -> Tuple[List[str], List[Dict[str, str]]]:
    """
    Header and rows of a CSV artifact.

    Raises:
        ValueError: If a row does not have as many fields as the header
    """
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = []
        for number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{number}: expected {len(header)} fields, got {len(row)}")
            rows.append(dict(zip(header, row)))
    return header, rows

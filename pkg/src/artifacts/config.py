"""
Run Configuration Parser

Converts a TOML run document into domain objects. A document has four
tables:

    [family]              model family (levels, rates, Q, mean, noise, ell0)
    [cost]                per-level cost model
    [[estimators]]        one entry per estimator family
    [run]                 run parameters of the commands

Example:

    [family]
    L = 4
    rates = [0, 1, 2, 3]
    Q_preset = "toy-exp"
    noise_scale = 0.1
    noise_rate = 3

    [cost]
    mode = "geometric"
    w0 = 0.25
    gamma_cost = 2

    [[estimators]]
    kind = "saob"
    coupling = 3

    [run]
    budget = 100

Matrices are row-major flat lists. Unknown keys and malformed values raise
ConfigError carrying the dotted path of the offending key, for example
``family.rates`` or ``estimators[1].kind``.
"""

import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..blue.errors import ConfigError
from ..family.cost import GEOMETRIC, TABLE, CostModel
from ..family.model_family import ExpansionFamily, RateVector
from ..family.presets import Q_PRESETS
from ..study.estimators import EstimatorSpec


FAMILY_KEYS = {"L", "q_exp", "rates", "gamma_cost", "mean", "Q", "Q_preset", "noise_scale", "noise_rate", "ell0"}
COST_KEYS = {"mode", "w0", "gamma_cost", "table"}
ESTIMATOR_KEYS = {"kind", "coupling", "bias", "s", "t", "label"}
RUN_KEYS = {
    "budget", "eps", "eps_grid", "sweep_mode", "levels", "seed", "replications",
    "rounding", "ell0_range", "coupling_range", "counts",
}
TOP_KEYS = {"family", "cost", "estimators", "run"}

SWEEP_MODES = ("eps", "levels")
ROUNDING_POLICIES = ("ceil", "none")


@dataclass(frozen=True)
class RunParameters:
    """
    The [run] table.

    Attributes:
        budget (Optional[float]): Budget p for allocate, schemes, convergence, simulate
        eps (Optional[float]): Single accuracy target
        eps_grid (Tuple[float, ...]): Accuracy grid of the eps sweep
        sweep_mode (str): "eps" or "levels"
        levels (Tuple[int, ...]): Finest levels of the levels sweep
        seed (int): Root seed
        replications (int): Simulation replications R
        rounding (str): "ceil" or "none"
        ell0_range (Tuple[float, ...]): Level shifts of the convergence study
        coupling_range (Tuple[int, ...]): Couplings of the convergence study
        counts (Optional[Tuple[int, ...]]): Explicit per-group counts for simulate
    """
    budget: Optional[float] = None
    eps: Optional[float] = None
    eps_grid: Tuple[float, ...] = ()
    sweep_mode: str = "eps"
    levels: Tuple[int, ...] = ()
    seed: int = 0
    replications: int = 1000
    rounding: str = "ceil"
    ell0_range: Tuple[float, ...] = (0, 1, 2, 3, 4, 5, 6)
    coupling_range: Tuple[int, ...] = (2, 3, 4)
    counts: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True)
class RunConfig:
    """
    A validated run document.

    Attributes:
        family (ExpansionFamily): The model family
        cost (CostModel): Cost per model evaluation
        estimators (Tuple[EstimatorSpec, ...]): Estimators to run, in order
        run (RunParameters): Command parameters
        source (Optional[Path]): File the document was read from
    """
    family: ExpansionFamily
    cost: CostModel
    estimators: Tuple[EstimatorSpec, ...]
    run: RunParameters = field(default_factory=RunParameters)
    source: Optional[Path] = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, run=replace(self.run, seed=seed))


def _reject_unknown(table: Dict[str, Any], allowed: set, path: str):
    for key in table:
        if key not in allowed:
            prefix = f"{path}." if path else ""
            raise ConfigError(f"{prefix}{key}", "unknown key")


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return value


def _string(value: Any, path: str, choices: Tuple[str, ...] = ()) -> str:
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    if choices and value not in choices:
        raise ConfigError(path, f"expected one of {', '.join(choices)}, got {value!r}")
    return value


def _numbers(value: Any, path: str) -> Tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list of numbers, got {value!r}")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _integers(value: Any, path: str) -> Tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list of integers, got {value!r}")
    return tuple(_integer(v, f"{path}[{i}]") for i, v in enumerate(value))


def _table(document: Dict[str, Any], key: str, required: bool = True) -> Dict[str, Any]:
    value = document.get(key)
    if value is None:
        if required:
            raise ConfigError(key, "missing table")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, "expected a table")
    return value


def parse_cost(table: Dict[str, Any]) -> CostModel:
    _reject_unknown(table, COST_KEYS, "cost")
    mode = _string(table.get("mode", GEOMETRIC), "cost.mode", (GEOMETRIC, TABLE))
    try:
        if mode == GEOMETRIC:
            if "gamma_cost" not in table:
                raise ConfigError("cost.gamma_cost", "required in geometric mode")
            return CostModel.geometric(
                _number(table.get("w0", 1.0), "cost.w0"),
                _number(table["gamma_cost"], "cost.gamma_cost"),
            )
        if "table" not in table:
            raise ConfigError("cost.table", "required in table mode")
        return CostModel.from_table(_numbers(table["table"], "cost.table"))
    except ValueError as error:
        raise ConfigError("cost", str(error)) from None


def _matrix(table: Dict[str, Any], n: int) -> np.ndarray:
    if ("Q" in table) == ("Q_preset" in table):
        raise ConfigError("family.Q", "give exactly one of Q and Q_preset")
    if "Q_preset" in table:
        name = _string(table["Q_preset"], "family.Q_preset", tuple(Q_PRESETS))
        return Q_PRESETS[name](n)
    values = _numbers(table["Q"], "family.Q")
    if len(values) != n * n:
        raise ConfigError("family.Q", f"expected {n * n} entries for a {n} x {n} matrix, got {len(values)}")
    return np.array(values).reshape(n, n)


def parse_family(table: Dict[str, Any], cost: CostModel) -> ExpansionFamily:
    """
    Build the model family of a [family] table.

    The cost rate of the rate vector defaults to the geometric cost rate of
    [cost]; table costs need ``family.gamma_cost``.
    """
    _reject_unknown(table, FAMILY_KEYS, "family")
    for key in ("L", "rates"):
        if key not in table:
            raise ConfigError(f"family.{key}", "missing key")
    L = _integer(table["L"], "family.L")
    gammas = _numbers(table["rates"], "family.rates")

    if "gamma_cost" in table:
        gamma_cost = _number(table["gamma_cost"], "family.gamma_cost")
    elif cost.mode == GEOMETRIC:
        gamma_cost = cost.gamma_cost
    else:
        raise ConfigError("family.gamma_cost", "required with table costs")
    try:
        rates = RateVector(gammas, gamma_cost)
    except ValueError as error:
        raise ConfigError("family.rates", str(error)) from None

    q_exp = _integer(table.get("q_exp", len(gammas)), "family.q_exp")
    if not 1 <= q_exp <= len(gammas):
        raise ConfigError("family.q_exp", f"must lie in 1..{len(gammas)}, got {q_exp}")
    Q = _matrix(table, q_exp)
    mean = _numbers(table["mean"], "family.mean") if "mean" in table else None
    if mean is not None and len(mean) != q_exp:
        raise ConfigError("family.mean", f"expected {q_exp} entries, got {len(mean)}")

    try:
        return ExpansionFamily(
            L=L,
            rates=rates,
            Q=Q,
            mean=mean,
            noise_scale=_number(table.get("noise_scale", 0.0), "family.noise_scale"),
            noise_rate=_number(table.get("noise_rate", 0.0), "family.noise_rate"),
            ell0=_number(table.get("ell0", 0.0), "family.ell0"),
        )
    except ValueError as error:
        raise ConfigError("family", str(error)) from None


def parse_estimator(table: Any, path: str) -> EstimatorSpec:
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    _reject_unknown(table, ESTIMATOR_KEYS, path)
    if "kind" not in table:
        raise ConfigError(f"{path}.kind", "missing key")
    optional_int = lambda key: _integer(table[key], f"{path}.{key}") if key in table else None
    try:
        return EstimatorSpec(
            kind=_string(table["kind"], f"{path}.kind"),
            coupling=optional_int("coupling"),
            bias=_string(table.get("bias", "unit_L"), f"{path}.bias"),
            s=optional_int("s"),
            t=optional_int("t"),
            label=_string(table["label"], f"{path}.label") if "label" in table else None,
        )
    except ValueError as error:
        raise ConfigError(path, str(error)) from None


def parse_run(table: Dict[str, Any]) -> RunParameters:
    _reject_unknown(table, RUN_KEYS, "run")
    values: Dict[str, Any] = {}
    for key in ("budget", "eps"):
        if key in table:
            values[key] = _number(table[key], f"run.{key}")
            if not values[key] > 0:
                raise ConfigError(f"run.{key}", "must be positive")
    if "eps_grid" in table:
        values["eps_grid"] = _numbers(table["eps_grid"], "run.eps_grid")
        if any(not 0 < eps < 1 for eps in values["eps_grid"]):
            raise ConfigError("run.eps_grid", "accuracies must lie in (0, 1)")
    if "sweep_mode" in table:
        values["sweep_mode"] = _string(table["sweep_mode"], "run.sweep_mode", SWEEP_MODES)
    if "levels" in table:
        values["levels"] = _integers(table["levels"], "run.levels")
        if any(L < 1 for L in values["levels"]):
            raise ConfigError("run.levels", "levels must be at least 1")
    if "seed" in table:
        values["seed"] = _integer(table["seed"], "run.seed")
        if values["seed"] < 0:
            raise ConfigError("run.seed", "must be nonnegative")
    if "replications" in table:
        values["replications"] = _integer(table["replications"], "run.replications")
        if values["replications"] < 2:
            raise ConfigError("run.replications", "need at least 2 replications")
    if "rounding" in table:
        values["rounding"] = _string(table["rounding"], "run.rounding", ROUNDING_POLICIES)
    if "ell0_range" in table:
        values["ell0_range"] = _numbers(table["ell0_range"], "run.ell0_range")
    if "coupling_range" in table:
        values["coupling_range"] = _integers(table["coupling_range"], "run.coupling_range")
        if any(q < 2 for q in values["coupling_range"]):
            raise ConfigError("run.coupling_range", "couplings must be at least 2")
    if "counts" in table:
        counts = table["counts"]
        values["counts"] = (_integer(counts, "run.counts"),) if not isinstance(counts, list) else _integers(counts, "run.counts")
        if any(m < 0 for m in values["counts"]):
            raise ConfigError("run.counts", "counts must be nonnegative")
    return RunParameters(**values)


def parse_config(document: Dict[str, Any], source: Optional[Path] = None) -> RunConfig:
    """
    Validate a parsed TOML document.

    Args:
        document (Dict[str, Any]): Output of tomllib
        source (Optional[Path]): Originating file, kept for messages

    Returns:
        RunConfig: The validated configuration

    Raises:
        ConfigError: On the first invalid or unknown key
    """
    _reject_unknown(document, TOP_KEYS, "")
    cost = parse_cost(_table(document, "cost"))
    family = parse_family(_table(document, "family"), cost)
    if cost.max_level is not None and cost.max_level < family.L:
        raise ConfigError("cost.table", f"prices {cost.max_level} levels, family has {family.L}")

    entries = document.get("estimators", [])
    if not isinstance(entries, list):
        raise ConfigError("estimators", "expected an array of tables")
    estimators = tuple(parse_estimator(entry, f"estimators[{i}]") for i, entry in enumerate(entries))
    return RunConfig(family, cost, estimators, parse_run(_table(document, "run", required=False)), source)


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a TOML run document.

    Raises:
        ConfigError: If the file is missing, is not valid TOML or fails validation
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            document = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as error:
        raise ConfigError("config", f"invalid TOML: {error}") from None
    return parse_config(document, path)

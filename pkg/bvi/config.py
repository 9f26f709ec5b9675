"""
Experiment configuration: a flat, validated schema that can be loaded from a
TOML file (tables are only for grouping and get flattened) and overridden by
command line flags or `key=value` pairs. Flags win over the file, which wins
over the schema defaults. Unknown keys are errors.

"""
import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Annotated, Dict, List, Literal, Optional

from pydantic import (AfterValidator, BaseModel, ConfigDict, Field,
                      ValidationError)

from bvi.solvers.registry import get_method

logger = logging.getLogger("bvi.config")

THREADS_ENV = "BVI_THREADS"


class ConfigError(ValueError):
    """Raised for unknown keys, malformed files or invalid values."""
    pass


def default_parallel() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")


def check_method(name: str) -> str:
    get_method(name)
    return name


# Any name of the method registry, including plugged-in baselines
Method = Annotated[str, AfterValidator(check_method)]


class ExperimentSettings(BaseModel):
    """Every key accepted by the command line and by configuration files."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Matrix source
    generator: Literal["policeman-burglar", "ramp"] = Field(
        "policeman-burglar", description="Matrix generator.")
    matrix: Optional[str] = Field(
        None, description="Matrix file (BVI1 binary or CSV); "
                          "replaces the generator.")
    n: int = Field(50, ge=2, description="Matrix size, i.e. M.")
    matrix_seed: Optional[int] = Field(
        None, ge=0, description="Seed of the generator; defaults to seed.")
    theta: float = Field(.8, gt=0, description="Policeman-burglar decay.")
    decomposition: Literal["rows", "columns"] = Field(
        "rows", description="Finite-sum decomposition of the game.")
    # Methods and parameters
    method: Method = Field("optimistic", description="Method of `run`.")
    methods: List[Method] = Field(
        ["optimistic"], min_length=1, description="Methods of a sweep.")
    theory: Optional[Literal["cor1", "cor2"]] = Field(
        "cor1", description="Theoretical parameter variant, used when "
                            "eta is not given.")
    eta: Optional[float] = Field(None, gt=0, description="Step size.")
    gamma: Optional[float] = Field(None, ge=0, le=1,
                                   description="Negative momentum.")
    K: Optional[int] = Field(None, ge=1, description="Steps per epoch.")
    S: Optional[int] = Field(
        None, ge=1, description="Number of epochs; enough for the budget.")
    eta_scale: float = Field(
        8., gt=0, description="Denominator of the batch term of the "
                              "theoretical step; the 1/(8 L2) cap is fixed.")
    C: float = Field(1., ge=0, description="Constant of 1 + C ln n.")
    scheme: Literal["uniform", "importance"] = Field(
        "uniform", description="Index sampling scheme.")
    shared_batch: bool = Field(False, description="One batch for both "
                                                  "players.")
    # Experiment protocol
    b: int = Field(1, ge=1, description="Batch size of `run`.")
    batches: List[int] = Field([1, 2, 5, 10], min_length=1,
                               description="Batch sizes of a sweep.")
    seed: int = Field(0, ge=0, description="Seed of `run`.")
    seeds: List[int] = Field([0], min_length=1,
                             description="Seeds of a sweep or tuning.")
    budget: Optional[int] = Field(
        None, gt=0, description="Oracle budget; 200 M by default.")
    gap_every: Optional[int] = Field(
        None, gt=0, description="Trace cadence in oracle units; M by default.")
    target_ratio: float = Field(
        .1, gt=0, lt=1, description="Gap reduction target of sweep summaries.")
    eta_grid: List[float] = Field([], description="Step sizes of `tune`.")
    gamma_grid: List[float] = Field([], description="Momenta of `tune`.")
    record_time: bool = Field(False, description="Write wall-clock seconds.")
    parallel: int = Field(default_factory=default_parallel, ge=1,
                          description=f"Concurrent cells ({THREADS_ENV}).")
    out_dir: str = Field(".", description="Output directory.")


def flatten_tables(table: dict, prefix="") -> Dict:
    """Flatten nested TOML tables, whose leaf keys must be unique."""
    flat = {}
    for key, value in table.items():
        if isinstance(value, dict):
            nested = flatten_tables(value, prefix=f"{prefix}{key}.")
            for leaf in nested:
                if leaf in flat:
                    raise ConfigError(f"Key {leaf} is defined twice")
            flat.update(nested)
        elif key in flat:
            raise ConfigError(f"Key {prefix}{key} is defined twice")
        else:
            flat[key] = value
    return flat


def read_config_file(path: str) -> Dict:
    with open(path, "rb") as fhandle:
        try:
            return flatten_tables(tomllib.load(fhandle))
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"Malformed config file {path}: {err}")


def parse_override(pair: str):
    """Parse `key=value`, reading the value as TOML and falling back to text."""
    if "=" not in pair:
        raise ConfigError(f"Overrides must read key=value, got {pair!r}")
    key, value = pair.split("=", 1)
    try:
        value = tomllib.loads(f"value = {value}")["value"]
    except tomllib.TOMLDecodeError:
        pass  # a bare string
    return key.strip(), value


def load_settings(path: str = None, pairs: List[str] = (),
                  flags: Dict = None) -> ExperimentSettings:
    """
    Build the settings from a config file, `key=value` overrides and flag
    values (None meaning not given), with later sources taking precedence.

    Raises
    ------
    ConfigError
        If a key is unknown or a value fails validation.

    """
    values = {} if path is None else read_config_file(path)
    values.update(dict(parse_override(pair) for pair in pairs))
    values.update({key: value for key, value in (flags or {}).items()
                   if value is not None})
    try:
        return ExperimentSettings(**values)
    except ValidationError as err:
        raise ConfigError(f"Invalid configuration: {err}")


def schema_help() -> str:
    """One line per schema key, used as the epilog of every subcommand."""
    lines = ["configuration keys (file, --set key=value, or --key):"]
    for name, field in ExperimentSettings.model_fields.items():
        default = f"env {THREADS_ENV} or 1" if field.default_factory \
            else repr(field.default)
        lines.append(f"  {name:<15}{field.description} [{default}]")
    return "\n".join(lines)

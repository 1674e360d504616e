"""Strict INI run configurations for the command-line front end.

Every section and key is checked against the schema below; unknown names,
type mismatches, and range violations are collected and reported together,
so one round of fixes repairs a config instead of one error per attempt.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .optimize import WeightVector, uniform_weights

COMMANDS = (
    "optimize",
    "pareto",
    "thermal",
    "stability-map",
    "surrogate",
    "check-gradients",
)


class ConfigError(Exception):
    """One or more configuration problems; `errors` lists them all."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class BarParams:
    """Geometry, load, and material knobs of the clamped-bar case."""

    nx: int = 45
    ny: int = 25
    volume_force: float = 1000.0
    tension: float = 2e4
    young: float = 320e9
    poisson: float = 0.25
    weibull_exponent: float = 5.0
    sigma0: float = 2e4


@dataclass(frozen=True)
class DescentSettings:
    max_iterations: int = 400
    rel_tol: float = 1e-7
    initial_step: float | None = None
    max_backtracks: int = 25
    weight_failure: float = 0.5


@dataclass(frozen=True)
class ThermalSettings:
    conductivity: float = 25.0
    heat_transfer: float = 5000.0
    h_values: tuple[float, ...] = (2000.0, 5000.0)
    k_values: tuple[float, ...] = (25.0, 40.0)
    max_iterations: int = 200


@dataclass(frozen=True)
class SurrogateSettings:
    half_thickness_min: float = 0.03
    half_thickness_max: float = 0.09
    weight_failure: float = 0.5
    n_initial: int = 5
    n_iterations: int = 10
    n_candidates: int = 512


@dataclass(frozen=True)
class GradcheckSettings:
    directions: int = 20
    tolerance: float = 1e-4


@dataclass(frozen=True)
class RunConfig:
    """Fully validated and defaulted run description."""

    command: str
    output: Path
    run_id: str
    seed: int
    threads: int
    verbose: bool
    bar: BarParams
    descent: DescentSettings
    weights: tuple[WeightVector, ...]
    thermal: ThermalSettings
    surrogate: SurrogateSettings
    gradcheck: GradcheckSettings
    cmb_cycles: float
    source_text: str


class _Collector:
    """Typed reader over one parsed INI file that aggregates all errors."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser
        self.errors: list[str] = []
        self.known: dict[str, set[str]] = {}

    def complain(self, message: str):
        self.errors.append(message)

    def _raw(self, section, key):
        self.known.setdefault(section, set()).add(key)
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return None

    def string(self, section, key, default=None):
        raw = self._raw(section, key)
        return raw if raw is not None else default

    def boolean(self, section, key, default):
        raw = self._raw(section, key)
        if raw is None:
            return default
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        self.complain(f"[{section}] {key}: expected a boolean, got {raw!r}")
        return default

    def integer(self, section, key, default, minimum=None):
        raw = self._raw(section, key)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            self.complain(f"[{section}] {key}: expected an integer, got {raw!r}")
            return default
        if minimum is not None and value < minimum:
            self.complain(f"[{section}] {key} must be at least {minimum}, got {value}")
            return default
        return value

    def floating(self, section, key, default, low=None, high=None,
                 low_open=False, high_open=False, low_message=None):
        raw = self._raw(section, key)
        if raw is None:
            return default
        try:
            value = float(raw)
        except ValueError:
            self.complain(f"[{section}] {key}: expected a number, got {raw!r}")
            return default
        if low is not None and (value < low or (low_open and value == low)):
            self.complain(
                low_message
                or f"[{section}] {key} must be "
                + (f"greater than {low}" if low_open else f"at least {low}")
                + f", got {value}")
            return default
        if high is not None and (value > high or (high_open and value == high)):
            self.complain(
                f"[{section}] {key} must be "
                + (f"less than {high}" if high_open else f"at most {high}")
                + f", got {value}")
            return default
        return value

    def float_list(self, section, key, default, low=None, high=None):
        raw = self._raw(section, key)
        if raw is None:
            return default
        out = []
        for piece in raw.split(","):
            piece = piece.strip()
            try:
                value = float(piece)
            except ValueError:
                self.complain(f"[{section}] {key}: expected numbers, got {piece!r}")
                return default
            if (low is not None and value < low) or (high is not None and value > high):
                span = f"between {low:g} and {high:g}" if high is not None \
                    else f"at least {low:g}"
                self.complain(f"[{section}] {key}: entries must be {span}, got {value}")
                return default
            out.append(value)
        if not out:
            self.complain(f"[{section}] {key}: empty list")
            return default
        return tuple(out)

    def check_unknown(self):
        for section in self.parser.sections():
            if section not in self.known:
                self.complain(f"unknown section [{section}]")
                continue
            for key in self.parser.options(section):
                if key not in self.known[section]:
                    self.complain(f"[{section}] unknown key {key!r}")


def parse_config(path) -> RunConfig:
    """Read, validate, and default one INI run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise ConfigError([f"no such config file: {path}"]) from None
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from None

    c = _Collector(parser)

    command = c.string("run", "command")
    if command is None:
        c.complain("[run] command is required")
    elif command not in COMMANDS:
        c.complain(
            f"[run] unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    output = Path(c.string("run", "output", "runs"))
    run_id = c.string("run", "run_id")
    seed = c.integer("run", "seed", 0, minimum=0)
    threads = c.integer("run", "threads", 1, minimum=1)
    verbose = c.boolean("run", "verbose", False)

    bar = BarParams(
        nx=c.integer("grid", "nx", 45, minimum=2),
        ny=c.integer("grid", "ny", 25, minimum=2),
        volume_force=c.floating("shape", "volume_force", 1000.0),
        tension=c.floating("shape", "tension", 2e4),
        young=c.floating("elastic", "young", 320e9, low=0.0, low_open=True),
        poisson=c.floating("elastic", "poisson", 0.25,
                           low=-1.0, high=0.5, low_open=True, high_open=True),
        weibull_exponent=c.floating(
            "weibull", "exponent", 5.0, low=1.0,
            low_message="[weibull] exponent must be at least 1 "
                        "(the failure integrand needs a convex power)"),
        sigma0=c.floating("weibull", "sigma0", 2e4, low=0.0, low_open=True),
    )

    descent = DescentSettings(
        max_iterations=c.integer("descent", "max_iterations", 400, minimum=1),
        rel_tol=c.floating("descent", "rel_tol", 1e-7, low=0.0, low_open=True),
        initial_step=c.floating("descent", "initial_step", None,
                                low=0.0, low_open=True),
        max_backtracks=c.integer("descent", "max_backtracks", 25, minimum=1),
        weight_failure=c.floating("descent", "weight_failure", 0.5,
                                  low=0.0, high=1.0),
    )

    count = c.integer("weights", "count", None, minimum=2)
    values = c.float_list("weights", "values", None, low=0.0, high=1.0)
    if count is not None and values is not None:
        c.complain("[weights] give either count or values, not both")
        weights = tuple(uniform_weights(9))
    elif values is not None:
        weights = tuple(WeightVector(v, 1.0 - v) for v in values)
    else:
        weights = tuple(uniform_weights(count if count is not None else 9))

    thermal = ThermalSettings(
        conductivity=c.floating("thermal", "conductivity", 25.0,
                                low=0.0, low_open=True),
        heat_transfer=c.floating("thermal", "heat_transfer", 5000.0,
                                 low=0.0, low_open=True),
        h_values=c.float_list("thermal", "h_values", (2000.0, 5000.0), low=0.0),
        k_values=c.float_list("thermal", "k_values", (25.0, 40.0), low=0.0),
        max_iterations=c.integer("thermal", "max_iterations", 200, minimum=2),
    )

    surrogate = SurrogateSettings(
        half_thickness_min=c.floating("surrogate", "half_thickness_min", 0.03,
                                      low=0.005, high=0.12, high_open=True),
        half_thickness_max=c.floating("surrogate", "half_thickness_max", 0.09,
                                      low=0.005, high=0.12, high_open=True),
        weight_failure=c.floating("surrogate", "weight_failure", 0.5,
                                  low=0.0, high=1.0),
        n_initial=c.integer("surrogate", "n_initial", 5, minimum=2),
        n_iterations=c.integer("surrogate", "n_iterations", 10, minimum=0),
        n_candidates=c.integer("surrogate", "n_candidates", 512, minimum=16),
    )
    if surrogate.half_thickness_min >= surrogate.half_thickness_max:
        c.complain("[surrogate] half_thickness_min must be below half_thickness_max")

    gradcheck = GradcheckSettings(
        directions=c.integer("gradcheck", "directions", 20, minimum=1),
        tolerance=c.floating("gradcheck", "tolerance", 1e-4,
                             low=0.0, low_open=True),
    )

    cmb_cycles = c.floating("cmb", "n_cycles", 1000.0, low=0.0, low_open=True)

    c.check_unknown()
    if c.errors:
        raise ConfigError(c.errors)

    if run_id is None:
        digest = hashlib.sha256(text.encode()).hexdigest()[:12]
        run_id = f"{command}-{digest}"

    return RunConfig(
        command=command,
        output=output,
        run_id=run_id,
        seed=seed,
        threads=threads,
        verbose=verbose,
        bar=bar,
        descent=descent,
        weights=weights,
        thermal=thermal,
        surrogate=surrogate,
        gradcheck=gradcheck,
        cmb_cycles=cmb_cycles,
        source_text=text,
    )

"""Run configuration: TOML schema, validation and canonical serialization.

Schema (every key optional except ``params.mu``, ``params.alpha`` and
``params.beta``; defaults reproduce the benchmark problem)::

    [grid]
    n = 32                      # even, >= 8
    dealias = "2/3"             # retained fraction of the Nyquist band

    [params]
    mu = 1.0                    # > 0
    alpha = 0.1                 # >= 0
    beta = 1.0                  # > 0
    r = 3.0                     # >= 1

    [noise]
    family = "diagonal_linear"  # additive | diagonal_linear | affine
    weights = [0.4, 0.3, 0.2, 0.15, 0.1, 0.08, 0.06, 0.05]

    [initial]
    kind = "cellular"           # cellular | random
    h_norm = 6.283185307179586  # H norm of the datum
    seed = 0                    # used by kind = "random"

    [solver]
    t_horizon = 0.5             # dyadic rational
    dt = 0.0001220703125        # T / 2**l with 2**l >= 2**max(levels)
    record_stride = 64
    scheme = "exponential-transform"  # | exponential-milstein | exponential-euler

    [experiment]
    levels = [3, 4, 5, 6, 7, 8]
    samples = 32
    master_seed = 0
    batch_samples = 8
    simulate_level = 5
    control_l2 = 1.0
    control_cells = 8
    skeleton_seeds = 8
    identity_trials = 1000
    pair_trials = 10000

    [output]
    dir = ""                    # empty: $SCBF_OUT_DIR, then ./scbf-out
    format = "both"             # csv | json | both
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction

import tomli
import tomli_w

from .experiments import DEFAULT_WEIGHTS
from .integrate import SCHEMES
from .noise import FAMILIES, is_dyadic

FORMATS = ("csv", "json", "both")
INITIAL_KINDS = ("cellular", "random")
REQUIRED = (("params", "mu"), ("params", "alpha"), ("params", "beta"))


class ConfigError(ValueError):
    """A configuration problem tagged with the violated constraint's name."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint
        self.message = message


@dataclass(frozen=True)
class GridSection:
    n: int = 32
    dealias: str = "2/3"


@dataclass(frozen=True)
class ParamsSection:
    mu: float = 1.0
    alpha: float = 0.1
    beta: float = 1.0
    r: float = 3.0


@dataclass(frozen=True)
class NoiseSection:
    family: str = "diagonal_linear"
    weights: tuple[float, ...] = DEFAULT_WEIGHTS


@dataclass(frozen=True)
class InitialSection:
    kind: str = "cellular"
    h_norm: float = 2 * math.pi
    seed: int = 0


@dataclass(frozen=True)
class SolverSection:
    t_horizon: float = 0.5
    dt: float = 0.5 / 2**12
    record_stride: int = 64
    scheme: str = SCHEMES[0]


@dataclass(frozen=True)
class ExperimentSection:
    levels: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    samples: int = 32
    master_seed: int = 0
    batch_samples: int = 8
    simulate_level: int = 5
    control_l2: float = 1.0
    control_cells: int = 8
    skeleton_seeds: int = 8
    identity_trials: int = 1000
    pair_trials: int = 10000


@dataclass(frozen=True)
class OutputSection:
    dir: str = ""
    format: str = "both"


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    params: ParamsSection = field(default_factory=ParamsSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    initial: InitialSection = field(default_factory=InitialSection)
    solver: SolverSection = field(default_factory=SolverSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        validate(self)

    @property
    def dealias_fraction(self) -> Fraction:
        return Fraction(self.grid.dealias)

    @property
    def step_level(self) -> int:
        ratio = Fraction(self.solver.t_horizon) / Fraction(self.solver.dt)
        return ratio.numerator.bit_length() - 1

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, experiment=replace(self.experiment, master_seed=int(seed)))

    def with_output(self, directory: str | None = None, fmt: str | None = None) -> "RunConfig":
        out = self.output
        if directory is not None:
            out = replace(out, dir=str(directory))
        if fmt is not None:
            out = replace(out, format=fmt)
        return replace(self, output=out)

    def to_dict(self) -> dict:
        data = asdict(self)
        for section in data.values():
            for key, value in section.items():
                if isinstance(value, tuple):
                    section[key] = list(value)
        return data

    def serialize(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def sha256(self) -> str:
        """Hash of the canonical TOML without [output], which never affects results."""
        data = self.to_dict()
        del data["output"]
        return hashlib.sha256(tomli_w.dumps(data).encode()).hexdigest()


_SECTION_TYPES = {
    "grid": GridSection,
    "params": ParamsSection,
    "noise": NoiseSection,
    "initial": InitialSection,
    "solver": SolverSection,
    "experiment": ExperimentSection,
    "output": OutputSection,
}


def _coerce(section: str, key: str, value, default):
    """Convert a TOML value to the type of the field default."""
    where = f"{section}.{key}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        elem = type(default[0]) if default else float
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and (elem is float or isinstance(v, int)) for v in value
        )
        value = tuple(elem(v) for v in value) if ok else value
    else:  # pragma: no cover - every field has a typed default
        ok = True
    if not ok:
        raise ConfigError("type", f"{where} has the wrong type ({type(value).__name__})")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and validate TOML text; see the module docstring for the schema."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("syntax", str(exc)) from None
    for name in raw:
        if name not in _SECTION_TYPES:
            raise ConfigError("unknown_key", f"unknown section [{name}]")
        if not isinstance(raw[name], dict):
            raise ConfigError("unknown_key", f"{name} must be a table")
    for section, key in REQUIRED:
        if key not in raw.get(section, {}):
            raise ConfigError("missing_field", f"{section}.{key} is required")
    built = {}
    for name, cls in _SECTION_TYPES.items():
        values = raw.get(name, {})
        defaults = cls()
        known = {f.name for f in fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError("unknown_key", f"unknown key {name}.{key}")
        built[name] = cls(**{k: _coerce(name, k, v, getattr(defaults, k)) for k, v in values.items()})
    return RunConfig(**built)


def _require(cond: bool, constraint: str, message: str):
    if not cond:
        raise ConfigError(constraint, message)


def validate(cfg: RunConfig) -> None:
    """Cross-field checks; raises ConfigError naming the violated constraint."""
    g, p, nz, ini, s, e, o = cfg.grid, cfg.params, cfg.noise, cfg.initial, cfg.solver, cfg.experiment, cfg.output
    _require(g.n >= 8 and g.n % 2 == 0, "grid_size", f"grid.n must be even and >= 8, got {g.n}")
    try:
        frac = Fraction(g.dealias)
    except (ValueError, ZeroDivisionError):
        raise ConfigError("dealias_fraction", f"grid.dealias {g.dealias!r} is not a fraction") from None
    _require(0 < frac <= 1, "dealias_fraction", f"grid.dealias must lie in (0, 1], got {g.dealias}")
    _require(p.mu > 0, "positive_viscosity", f"params.mu must be > 0, got {p.mu}")
    _require(p.alpha >= 0, "nonnegative_darcy", f"params.alpha must be >= 0, got {p.alpha}")
    _require(p.beta > 0, "positive_forchheimer", f"params.beta must be > 0, got {p.beta}")
    _require(p.r >= 1, "absorption_exponent", f"params.r must be >= 1, got {p.r}")
    _require(nz.family in FAMILIES, "noise_family", f"noise.family must be one of {', '.join(FAMILIES)}")
    _require(len(nz.weights) >= 1, "noise_weights", "noise.weights must not be empty")
    _require(all(math.isfinite(w) for w in nz.weights), "noise_weights", "noise.weights must be finite")
    _require(ini.kind in INITIAL_KINDS, "initial_kind", f"initial.kind must be one of {', '.join(INITIAL_KINDS)}")
    _require(ini.h_norm > 0, "initial_norm", "initial.h_norm must be > 0")
    _require(ini.seed >= 0, "seed_range", "initial.seed must be >= 0")
    _require(s.t_horizon > 0 and is_dyadic(s.t_horizon), "dyadic_horizon", f"solver.t_horizon = {s.t_horizon} is not a positive dyadic rational")
    _require(s.dt > 0, "dyadic_step", "solver.dt must be > 0")
    ratio = Fraction(s.t_horizon) / Fraction(s.dt)
    _require(
        ratio.denominator == 1 and ratio.numerator & (ratio.numerator - 1) == 0,
        "dyadic_step",
        f"solver.dt = {s.dt} is not T / 2**l for T = {s.t_horizon}",
    )
    _require(s.record_stride >= 1, "record_stride", "solver.record_stride must be >= 1")
    _require(s.scheme in SCHEMES, "scheme", f"solver.scheme must be one of {', '.join(SCHEMES)}")
    _require(len(e.levels) >= 1 and all(n >= 1 for n in e.levels), "levels", "experiment.levels must be non-empty and >= 1")
    _require(list(e.levels) == sorted(set(e.levels)), "levels", "experiment.levels must be strictly increasing")
    step_level = ratio.numerator.bit_length() - 1
    sigma_min = s.t_horizon / 2 ** max(e.levels)
    _require(
        step_level >= max(e.levels),
        "step_divides_sigma",
        f"solver.dt = {s.dt} does not divide sigma_min = {sigma_min} (level {max(e.levels)})",
    )
    _require(
        max(e.levels) <= len(nz.weights),
        "levels_within_noise",
        f"level {max(e.levels)} needs at least {max(e.levels)} noise weights, got {len(nz.weights)}",
    )
    _require(1 <= e.simulate_level <= min(step_level, len(nz.weights)), "simulate_level", "experiment.simulate_level out of range")
    _require(e.samples >= 1, "samples", "experiment.samples must be >= 1")
    _require(e.batch_samples >= 1, "samples", "experiment.batch_samples must be >= 1")
    _require(0 <= e.master_seed < 2**64, "seed_range", "experiment.master_seed must fit in an unsigned 64-bit integer")
    _require(e.control_l2 >= 0, "control", "experiment.control_l2 must be >= 0")
    _require(
        e.control_cells >= 1 and e.control_cells & (e.control_cells - 1) == 0 and e.control_cells <= 2**step_level,
        "control",
        "experiment.control_cells must be a power of two no finer than the step",
    )
    _require(e.skeleton_seeds >= 1, "samples", "experiment.skeleton_seeds must be >= 1")
    _require(e.identity_trials >= 1 and e.pair_trials >= 1, "samples", "verification trial counts must be >= 1")
    _require(o.format in FORMATS, "output_format", f"output.format must be one of {', '.join(FORMATS)}")


def default_text() -> str:
    """The benchmark configuration as TOML text."""
    return RunConfig().serialize()

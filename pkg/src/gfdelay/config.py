"""Scenario configuration: typed settings, INI-style loading, round-tripping.

The on-disk format is a sectioned key=value file with sections [system],
[traffic], [optimizer], [simulator], and [experiment]. Unknown sections or
keys are hard errors (no silent typos), missing required keys and
out-of-range values are reported with their full key path, and
load(emit(cfg)) == cfg holds exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, replace
from typing import Callable

from . import fbl
from .queueing import TrafficParams


class ConfigError(ValueError):
    """Malformed, incomplete, or out-of-range configuration."""


@dataclass(frozen=True)
class OptimizerSettings:
    """Hyperparameters of the blocklength optimizer (all config-overridable).

    ``tau`` is a dimensionless multiplier on an internally derived proximal
    scale (objective scale / blocklength scale squared); ``omega`` weights the
    squared violation of the per-user deliverable-bits constraint.
    ``fixed_eps`` optionally pins the error probability used inside the rate
    constraint instead of the self-consistent per-blocklength value.
    """

    omega: float = 1e3
    tau: float = 1.0
    tol_inner: float = 1e-8
    tol_outer: float = 1e-6
    max_inner: int = 500
    max_outer: int = 50
    init_tti_ms: float = 1.0
    n_max_symbols: float = 1e5
    golden_iters: int = 60
    warm_start: bool = True
    fixed_eps: float | None = None


@dataclass(frozen=True)
class SimulatorSettings:
    """Monte Carlo event-loop settings.

    ``contention`` selects who draws preambles each slot: "full" lets every
    user contend (matching the fixed-K collision assumption of the analytic
    model), "backlogged" restricts contention to users with queued packets
    (surfacing the gap between that assumption and realized load).
    """

    horizon: int = 100_000
    replications: int = 1
    cr_max_retx: int = 1000
    contention: str = "full"
    exact_error: bool = False


@dataclass(frozen=True)
class ExperimentSettings:
    """Sweep grids, seed, and the horizon used for sweep confirmations."""

    seed: int = 2
    k_grid: tuple[int, ...] = tuple(range(5, 55, 5))
    n_grid: tuple[int, ...] = tuple(range(100, 2100, 100))
    b_grid: tuple[int, ...] = tuple(range(50, 450, 50))
    lambda_list: tuple[float, ...] = (0.2, 0.4)
    sweep_horizon: int = 20_000


@dataclass(frozen=True)
class SystemConfig:
    """Full scenario: channel, traffic, and nested tool settings."""

    k_users: int
    m_pre: int
    w_hz: float
    p0_dbm: float
    noise_dbm: float
    b_bits: float
    lambda_rate: float
    t_max_s: float
    q_th: int
    d_p_ms: float
    baseline_ttis_ms: tuple[float, ...] = (1.0, 0.5)
    opt: OptimizerSettings = field(default_factory=OptimizerSettings)
    sim: SimulatorSettings = field(default_factory=SimulatorSettings)
    exp: ExperimentSettings = field(default_factory=ExperimentSettings)

    def __post_init__(self) -> None:
        _validate(self)

    def channel(self) -> fbl.ChannelParams:
        return fbl.ChannelParams.from_dbm(self.p0_dbm, self.noise_dbm)

    def traffic(self) -> TrafficParams:
        return TrafficParams(self.lambda_rate, self.t_max_s, self.q_th)

    @property
    def d_p_s(self) -> float:
        return self.d_p_ms * 1e-3


def reference_config() -> SystemConfig:
    """The shipped reference scenario.

    Bandwidth 1 MHz, power-control threshold and noise both -90 dBm, 1 ms
    combined propagation/processing overhead, queue cap 5, 20 preambles, and
    fixed-TTI baselines of 1 ms and 0.5 ms. K = 20 users, 100-bit packets,
    and arrival rate 0.4/s are repository choices, not externally fixed;
    0.4/s is the heavier of the two loads the delay-vs-bits experiment uses.
    """
    return SystemConfig(
        k_users=20,
        m_pre=20,
        w_hz=1e6,
        p0_dbm=-90.0,
        noise_dbm=-90.0,
        b_bits=100.0,
        lambda_rate=0.4,
        t_max_s=1.0,
        q_th=5,
        d_p_ms=1.0,
        baseline_ttis_ms=(1.0, 0.5),
    )


# ---------------------------------------------------------------------------
# key table: one entry per (section, key) with parsing and range checks
# ---------------------------------------------------------------------------


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_tuple(raw: str) -> tuple[float, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ValueError("empty list")
    return tuple(float(s) for s in items)


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    items = [s for s in (part.strip() for part in raw.split(",")) if s]
    if not items:
        raise ValueError("empty list")
    return tuple(int(s) for s in items)


def _parse_optional_float(raw: str) -> float | None:
    return None if raw.strip() == "" else float(raw.strip())


def _parse_contention(raw: str) -> str:
    val = raw.strip().lower()
    if val not in ("full", "backlogged"):
        raise ValueError(f"must be 'full' or 'backlogged', got {raw!r}")
    return val


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class _Key:
    attr: str
    parse: Callable
    check: Callable[[object], bool] = lambda _: True
    require: str = ""
    required: bool = False


def _pos(x) -> bool:
    return x > 0


def _nonneg(x) -> bool:
    return x >= 0


def _ge1(x) -> bool:
    return x >= 1


_SCHEMA: dict[str, dict[str, _Key]] = {
    "system": {
        "k_users": _Key("k_users", _parse_int, _ge1, ">= 1", required=True),
        "m_pre": _Key("m_pre", _parse_int, _ge1, ">= 1", required=True),
        "w_hz": _Key("w_hz", _parse_float, _pos, "> 0", required=True),
        "p0_dbm": _Key("p0_dbm", _parse_float, required=True),
        "noise_dbm": _Key("noise_dbm", _parse_float, required=True),
        "b_bits": _Key("b_bits", _parse_float, _pos, "> 0", required=True),
        "d_p_ms": _Key("d_p_ms", _parse_float, _nonneg, ">= 0", required=True),
        "baseline_ttis_ms": _Key(
            "baseline_ttis_ms",
            _parse_float_tuple,
            lambda v: all(t > 0 for t in v),
            "all entries > 0",
            required=True,
        ),
    },
    "traffic": {
        "lambda_rate": _Key("lambda_rate", _parse_float, _nonneg, ">= 0", required=True),
        "t_max_s": _Key("t_max_s", _parse_float, _pos, "> 0", required=True),
        "q_th": _Key("q_th", _parse_int, _nonneg, ">= 0", required=True),
    },
    "optimizer": {
        "omega": _Key("opt.omega", _parse_float, _pos, "> 0"),
        "tau": _Key("opt.tau", _parse_float, _pos, "> 0"),
        "tol_inner": _Key("opt.tol_inner", _parse_float, _pos, "> 0"),
        "tol_outer": _Key("opt.tol_outer", _parse_float, _pos, "> 0"),
        "max_inner": _Key("opt.max_inner", _parse_int, _ge1, ">= 1"),
        "max_outer": _Key("opt.max_outer", _parse_int, _ge1, ">= 1"),
        "init_tti_ms": _Key("opt.init_tti_ms", _parse_float, _pos, "> 0"),
        "n_max_symbols": _Key("opt.n_max_symbols", _parse_float, _pos, "> 0"),
        "golden_iters": _Key("opt.golden_iters", _parse_int, _ge1, ">= 1"),
        "warm_start": _Key("opt.warm_start", _parse_bool),
        "fixed_eps": _Key(
            "opt.fixed_eps",
            _parse_optional_float,
            lambda v: v is None or 0.0 < v < 1.0,
            "in (0, 1) or blank",
        ),
    },
    "simulator": {
        "horizon": _Key("sim.horizon", _parse_int, _ge1, ">= 1"),
        "replications": _Key("sim.replications", _parse_int, _ge1, ">= 1"),
        "cr_max_retx": _Key("sim.cr_max_retx", _parse_int, _ge1, ">= 1"),
        "contention": _Key("sim.contention", _parse_contention),
        "exact_error": _Key("sim.exact_error", _parse_bool),
    },
    "experiment": {
        "seed": _Key("exp.seed", _parse_int),
        "k_grid": _Key(
            "exp.k_grid", _parse_int_tuple, lambda v: all(k >= 1 for k in v), "all >= 1"
        ),
        "n_grid": _Key(
            "exp.n_grid", _parse_int_tuple, lambda v: all(n > 0 for n in v), "all > 0"
        ),
        "b_grid": _Key(
            "exp.b_grid", _parse_int_tuple, lambda v: all(b > 0 for b in v), "all > 0"
        ),
        "lambda_list": _Key(
            "exp.lambda_list",
            _parse_float_tuple,
            lambda v: all(l >= 0 for l in v),
            "all >= 0",
        ),
        "sweep_horizon": _Key("exp.sweep_horizon", _parse_int, _ge1, ">= 1"),
    },
}


def _validate(cfg: SystemConfig) -> None:
    for section, keys in _SCHEMA.items():
        for key, spec in keys.items():
            value = _get_attr(cfg, spec.attr)
            if not spec.check(value):
                raise ConfigError(f"{section}.{key}: must be {spec.require} (got {value!r})")


def _get_attr(cfg: SystemConfig, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _build(values: dict[tuple[str, str], object]) -> SystemConfig:
    opt = OptimizerSettings(
        **{k: values[("optimizer", k)] for k in _SCHEMA["optimizer"] if ("optimizer", k) in values}
    )
    sim = SimulatorSettings(
        **{k: values[("simulator", k)] for k in _SCHEMA["simulator"] if ("simulator", k) in values}
    )
    exp = ExperimentSettings(
        **{k: values[("experiment", k)] for k in _SCHEMA["experiment"] if ("experiment", k) in values}
    )
    top = {k: values[(s, k)] for s in ("system", "traffic") for k in _SCHEMA[s]}
    return SystemConfig(opt=opt, sim=sim, exp=exp, **top)


def load_config_string(text: str, source: str = "<string>") -> SystemConfig:
    """Parse a config document; see load_config."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {source}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    values: dict[tuple[str, str], object] = {}
    for section, keys in _SCHEMA.items():
        for key, spec in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    parsed = spec.parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc
                if not spec.check(parsed):
                    raise ConfigError(f"{section}.{key}: must be {spec.require} (got {parsed!r})")
                values[(section, key)] = parsed
            elif spec.required:
                raise ConfigError(f"missing required key {section}.{key}")
    return _build(values)


def load_config(path) -> SystemConfig:
    """Load a SystemConfig from a sectioned key=value file.

    Raises:
        ConfigError: unknown section/key, missing required key, unparsable or
            out-of-range value; the message names the offending key path.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return load_config_string(text, source=str(path))


def emit_config_string(cfg: SystemConfig) -> str:
    """Serialize to the canonical section/key order; floats keep full precision."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, spec in keys.items():
            out.write(f"{key} = {_fmt(_get_attr(cfg, spec.attr))}\n")
        out.write("\n")
    return out.getvalue()


def emit_config(cfg: SystemConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_config_string(cfg))


def config_hash(cfg: SystemConfig) -> str:
    """Stable short hash of the canonical serialization."""
    return hashlib.sha256(emit_config_string(cfg).encode("utf-8")).hexdigest()[:16]


def apply_overrides(cfg: SystemConfig, assignments: list[str]) -> SystemConfig:
    """Apply ``section.key=value`` overrides (the CLI --set flag)."""
    values = {
        (section, key): _get_attr(cfg, spec.attr)
        for section, keys in _SCHEMA.items()
        for key, spec in keys.items()
    }
    for assignment in assignments:
        if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
        path, raw = assignment.split("=", 1)
        section, _, key = path.strip().partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        spec = _SCHEMA[section][key]
        try:
            parsed = spec.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc
        if not spec.check(parsed):
            raise ConfigError(f"{section}.{key}: must be {spec.require} (got {parsed!r})")
        values[(section, key)] = parsed
    return _build(values)


def with_users(cfg: SystemConfig, k_users: int) -> SystemConfig:
    """Copy of cfg with a different user count (sweep helper)."""
    return replace(cfg, k_users=k_users)

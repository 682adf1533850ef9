"""Run configuration: JSON schema, defaults and canonical serialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import UsageError
from .lattice import GroupSpec, InfectionKernel, parse_group

COMMANDS = (
    "exact-r", "exact-duality", "eigenmeasure", "submult", "mc-growth", "mc-survival",
    "find-critical", "verify-bound", "bound-table", "submartingale-fuzz", "drift-report",
)
MC_COMMANDS = ("mc-growth", "mc-survival", "find-critical", "verify-bound")


class ConfigError(UsageError):
    pass


@dataclass
class RunConfig:
    command: str
    group: str = "torus:4x1"
    kernel: Any = "nn:1"
    delta: float | None = None
    delta_grid: str | None = None
    horizon: float = 30.0
    replicas: int = 1000
    seed: int | None = None
    size_cap: int = 10_000
    grid_points: int = 101
    window: list | None = None
    delta_lo: float | None = None
    delta_hi: float | None = None
    iterations: int = 12
    p_star: float = 0.01
    delta_c: float | None = None
    gammas: list = field(default_factory=lambda: [0.3, 0.5, 0.8])
    gamma_grid: str = "0.01:0.99:0.01"
    eps: float = 0.5
    eps1: float | None = None
    eps2: float | None = None
    cases: int = 100
    t_max: float = 2.0
    lambdas: list | None = None
    out: str | None = None
    threads: int = 1
    tolerances: dict = field(default_factory=dict)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def group_spec(self) -> GroupSpec:
        return parse_group(self.group)

    def kernel_spec(self) -> InfectionKernel:
        return parse_kernel(self.group_spec(), self.kernel)

    def deltas(self) -> list:
        if self.delta_grid is not None:
            return parse_grid(self.delta_grid)
        if self.delta is None:
            raise ConfigError("need delta or delta_grid")
        return [float(self.delta)]

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


_FIELD_TYPES = {
    "command": str, "group": str, "delta": float, "delta_grid": str, "horizon": float,
    "replicas": int, "seed": int, "size_cap": int, "grid_points": int, "window": list,
    "delta_lo": float, "delta_hi": float, "iterations": int, "p_star": float,
    "delta_c": float, "gammas": list, "gamma_grid": str, "eps": float, "eps1": float,
    "eps2": float, "cases": int, "t_max": float, "lambdas": list, "out": str,
    "threads": int, "tolerances": dict,
}


def _coerce(name: str, value):
    if value is None or name == "kernel":
        return value
    want = _FIELD_TYPES[name]
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, want) and want not in (int, float):
        return value
    raise ConfigError(f"field {name!r} must be {want.__name__}, got {type(value).__name__}")


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}; choose from {', '.join(COMMANDS)}")
    for f in fields(RunConfig):
        setattr(cfg, f.name, _coerce(f.name, getattr(cfg, f.name)))
    if cfg.command in MC_COMMANDS and cfg.seed is None:
        raise ConfigError(f"{cfg.command} needs an explicit seed")
    if cfg.seed is not None and cfg.seed < 0:
        raise ConfigError("seed must be >= 0")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.grid_points < 2:
        raise ConfigError("grid_points must be >= 2")
    if cfg.window is not None and len(cfg.window) != 2:
        raise ConfigError("window must be [lo, hi]")
    for k, v in cfg.tolerances.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"tolerance {k!r} must be a number")
    if cfg.delta_grid is not None:
        parse_grid(cfg.delta_grid)
    parse_group(cfg.group)
    cfg.kernel_spec()
    return cfg


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    if "command" not in data:
        raise ConfigError("config needs a 'command' field")
    return validate(RunConfig(**data))


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def parse_grid(text: str) -> list:
    """``lo:hi:step`` inclusive of both ends, e.g. ``0:2:0.1`` has 21 values."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"grid {text!r} must look like lo:hi:step") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"grid {text!r} needs step > 0 and hi >= lo")
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + k * step, 12) for k in range(count)]


def parse_kernel(group: GroupSpec, spec) -> InfectionKernel:
    """``"nn:RATE"``, ``"zero"``, a JSON string of pairs, or a list of ``[offset, rate]`` pairs."""
    if isinstance(spec, str):
        s = spec.strip()
        if s.startswith("["):
            try:
                spec = json.loads(s)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad kernel JSON: {exc.msg}") from None
        elif s == "zero":
            return InfectionKernel.zero(group)
        elif s.startswith("nn:"):
            try:
                return InfectionKernel.nearest_neighbor(group, float(s[3:]))
            except ValueError:
                raise ConfigError(f"bad kernel spec {spec!r}") from None
        else:
            raise ConfigError(f"unknown kernel spec {spec!r}; use nn:RATE, zero or [[offset, rate], ...]")
    if not isinstance(spec, list):
        raise ConfigError("kernel must be a string or a list of [offset, rate] pairs")
    return InfectionKernel.from_pairs(group, spec)

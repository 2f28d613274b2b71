"""Run configuration: one strict JSON document per experiment."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

EXPERIMENTS = (
    "constants",
    "verify-velocity",
    "transport-demo",
    "layer-dynamics",
    "layer-run",
    "blowup-proxy",
    "check-all",
)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class Tolerances:
    parity: float = 1e-6
    c0_schemes: float = 1e-6
    velocity_oracle: float = 1e-3
    divergence: float = 1e-10
    oddness: float = 1e-10
    transport: float = 1e-6
    angle: float = 1e-8
    amplitude_floor: float = math.exp(-2.0)
    bisection: float = 1e-8
    identity: float = 1e-5
    residual: float = 1e-4
    energy: float = 1e-6
    support_leak: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int = 0
    out: str | None = None
    # seed layer and the layer built on top of it
    N0: float = 4.0
    beta0: float = 0.125
    N1: float | None = 64.0
    beta1: float = 0.125
    layers: int = 1
    # physical and label grids
    n: int = 512
    L: float = 1.0
    label_points: int = 256
    step: float = 1e-3
    M_cap: int = 4
    j_max: int = 2
    residual_j0: int = 1
    record_offsets: tuple[float, ...] = (0.1,)
    probe_count: int = 20
    # velocity checks
    velocity_n: int = 256
    velocity_L: float = 4.0
    velocity_samples: int = 10
    velocity_points: int = 10
    images: int = 4
    K: tuple[int, ...] = (0, 1, 2)
    N_list: tuple[float, ...] = (32.0, 64.0, 128.0, 256.0, 512.0)
    direction: tuple[float, float] = (0.0, 1.0)
    study_n: int = 1024
    study_L: float = 0.75
    study_radius: float = 0.1875
    # transport checks
    transport_cases: int = 5
    transport_window: float = 0.1
    # layer dynamics
    log2_N_sweep: tuple[float, ...] = (8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0)
    selection_log_N: float = 300.0
    selection_beta: float = 0.24
    desk_log2_N: float = 8.0
    # constants
    constants_path: str | None = None
    rebuild_table: bool = False
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown kind {self.experiment!r}; expected one of {EXPERIMENTS}")
        for name in ("beta0", "beta1"):
            b = getattr(self, name)
            if not 0.0 < b < 0.25:
                raise ConfigError(f"{name}: must lie in (0, 1/4), got {b}")
        if not 0 <= self.layers <= 3:
            raise ConfigError(f"layers: must lie in 0..3, got {self.layers}")
        for f in dataclasses.fields(Tolerances):
            v = getattr(self.tolerances, f.name)
            if not v > 0:
                raise ConfigError(f"tolerances.{f.name}: must be positive, got {v}")
        if self.N0 <= 2:
            raise ConfigError("N0: must exceed 2")
        if self.N1 is not None and self.N1 <= self.N0:
            raise ConfigError("N1: must exceed N0")
        for name in ("n", "label_points", "velocity_n", "study_n"):
            v = getattr(self, name)
            if v < 16 or v & (v - 1):
                raise ConfigError(f"{name}: must be a power of two >= 16, got {v}")
        if not 0 < self.step <= 0.01:
            raise ConfigError(f"step: must lie in (0, 0.01], got {self.step}")
        if not 1 <= self.residual_j0 <= self.j_max:
            raise ConfigError("residual_j0: must lie in 1..j_max")
        if abs(math.hypot(*self.direction) - 1.0) > 1e-12:
            raise ConfigError("direction: must be a unit vector (a, b)")


_TUPLES = {"record_offsets", "K", "N_list", "direction", "log2_N_sweep"}
_STRINGS = {"out", "constants_path"}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if name in _STRINGS:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        return value
    if name in _TUPLES:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    return value


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "experiment" not in doc:
        raise ConfigError("experiment: missing required field")
    known = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    defaults = RunConfig(experiment="check-all")
    kw: dict[str, Any] = {}
    for name, value in doc.items():
        if name == "tolerances":
            if not isinstance(value, dict):
                raise ConfigError("tolerances: expected an object")
            tol_fields = {f.name for f in dataclasses.fields(Tolerances)}
            bad = sorted(set(value) - tol_fields)
            if bad:
                raise ConfigError(f"tolerances.{bad[0]}: unknown field")
            kw[name] = Tolerances(**{k: _coerce(f"tolerances.{k}", v, 1.0) for k, v in value.items()})
        elif name == "experiment":
            kw[name] = value
        else:
            default = getattr(defaults, name)
            kw[name] = value if value is None else _coerce(name, value, 0.0 if default is None else default)
    return RunConfig(**kw)


def load(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return from_dict(doc)


def to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for k in _TUPLES:
        d[k] = list(d[k])
    return d

"""Strict JSON run configuration.

Every section is a dataclass; unknown keys and missing required keys raise
:class:`ConfigError` naming the offending key path.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..core import Boundary, Grid, Params
from ..solver import SchemeConfig

ENV_PREFIX = "CHEMOSPREAD_"


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_REQUIRED = dataclasses.MISSING


def _parse(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", path)
    kwargs = {}
    nested = getattr(cls, "_nested", {})
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name not in data:
            if f.default is _REQUIRED and f.default_factory is _REQUIRED:
                raise ConfigError("missing required key", sub)
            continue
        value = data[name]
        if name in nested and value is not None:
            value = _parse(nested[name], value, sub)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from exc


def _dump(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _dump(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_dump(x) for x in obj]
    return copy.deepcopy(obj)


@dataclass
class ParamsSpec:
    chi: float
    a: float
    b: float
    lam: float
    mu: float
    dim: int = 1

    def __post_init__(self):
        self.build()

    def build(self) -> Params:
        return Params(float(self.chi), float(self.a), float(self.b), float(self.lam),
                      float(self.mu), int(self.dim))


@dataclass
class GridSpec:
    lo: list
    hi: list
    n: list
    boundary: str = "neumann"

    def __post_init__(self):
        self.build()

    def build(self) -> Grid:
        return Grid(tuple(self.lo), tuple(self.hi), tuple(self.n), Boundary(self.boundary))


@dataclass
class SchemeSpec:
    dt: float = 0.01
    dt_policy: str = "adaptive"
    safety: float = 0.4
    flux: str = "upwind"
    diffusion: str = "crank_nicolson"
    frame_speed: float = 0.0
    frame_direction: list | None = None

    def __post_init__(self):
        self.build()

    def build(self) -> SchemeConfig:
        return SchemeConfig(
            dt=float(self.dt), dt_policy=self.dt_policy, safety=float(self.safety),
            flux=self.flux, diffusion=self.diffusion, frame_speed=float(self.frame_speed),
            frame_direction=None if self.frame_direction is None else tuple(self.frame_direction),
        )


@dataclass
class InitialSpec:
    kind: str = "compact_bump"
    amplitude: float = 1.0
    v_amplitude: float = 0.5
    radius: float = 40.0
    center: list | None = None
    xi: list | float | None = None
    x0: float = 0.0
    width: float = 5.0
    path: str | None = None
    seed: int = 0
    noise: float = 0.0


@dataclass
class ObserverSpec:
    front_every: float = 0.5
    snapshot_every: float = 5.0
    residual_stride: int = 1
    dichotomy_every: float = 1.0
    ball_every: float = 0.5
    clearance: float = 0.1


@dataclass
class AnalysisSpec:
    thresholds: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    threshold: float = 0.5
    direction: Any = None
    two_sided: bool = False
    window_fraction: float = 0.5
    eps: list = field(default_factory=lambda: [0.5])
    speed_tol: float = 0.05
    floor: float = 1e-3
    region: str | None = None
    envelope_k: float | None = 0.5
    tau_disc: Any = "auto"
    eta_fraction: float = 0.1
    burn_in: float = 5.0
    ball_radius: float | None = None
    big_m: float | None = None

    def __post_init__(self):
        if not (self.tau_disc in (None, "auto") or isinstance(self.tau_disc, (int, float))):
            raise ConfigError("tau_disc must be 'auto', null or a number", "analysis.tau_disc")
        if self.region not in (None, "ball", "slab", "halfspace"):
            raise ConfigError(f"unknown region {self.region!r}", "analysis.region")


@dataclass
class OutputSpec:
    dir: str = "out"
    snapshots: bool = True


@dataclass
class RunConfig:
    params: ParamsSpec
    grid: GridSpec
    horizon: float
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    observers: ObserverSpec = field(default_factory=ObserverSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    _nested = {
        "params": ParamsSpec,
        "grid": GridSpec,
        "scheme": SchemeSpec,
        "initial": InitialSpec,
        "observers": ObserverSpec,
        "analysis": AnalysisSpec,
        "output": OutputSpec,
    }

    def __post_init__(self):
        if not float(self.horizon) >= 0:
            raise ConfigError("horizon must be nonnegative", "horizon")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _parse(cls, data, "")

    def to_dict(self) -> dict:
        return _dump(self)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            set_path(data, key, value)
        return RunConfig.from_dict(data)


def set_path(data: dict, dotted: str, value: Any):
    """Assign ``value`` at a dotted key path, creating intermediate objects."""
    parts = dotted.split(".")
    cur = data
    for p in parts[:-1]:
        nxt = cur.get(p)
        if nxt is None:
            nxt = cur[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError("cannot descend into a non-object", dotted)
        cur = nxt
    cur[parts[-1]] = value


def env_overrides(environ=None, prefix: str = ENV_PREFIX) -> dict[str, Any]:
    """CHEMOSPREAD_PARAMS__CHI=0.2 → {"params.chi": 0.2}; values parsed as JSON when possible."""
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(prefix):
            continue
        path = ".".join(part.lower() for part in key[len(prefix):].split("__"))
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[path] = value
    return out


def load_config(path: str | os.PathLike, environ=None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    for key, value in env_overrides(environ).items():
        set_path(data, key, value)
    return RunConfig.from_dict(data)

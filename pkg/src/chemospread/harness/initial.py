"""Initial data for the three classes the spreading results cover.

CompactBump has compact support, FrontLike fills a half-space behind a
planar interface, TwoSided fills a slab. All profiles are C¹ or smoother
and exactly zero outside a finite region on the grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Grid, State
from .config import ConfigError, InitialSpec


class Kind(str, enum.Enum):
    COMPACT_BUMP = "compact_bump"
    FRONT_LIKE = "front_like"
    TWO_SIDED = "two_sided"
    CUSTOM = "custom"


def smooth_cutoff(z: np.ndarray) -> np.ndarray:
    """1 for z ≤ −1, 0 for z ≥ 1, quintic (C²) in between."""
    s = np.clip((np.asarray(z, float) + 1) / 2, 0.0, 1.0)
    return 1 - s ** 3 * (10 - 15 * s + 6 * s * s)


def bump(r: np.ndarray, radius: float) -> np.ndarray:
    return np.maximum(0.0, 1 - (r / radius) ** 2) ** 2


@dataclass
class InitialDataSpec:
    kind: Kind
    amplitude: float = 1.0
    v_amplitude: float = 0.5
    radius: float = 40.0
    center: tuple | None = None
    xi: tuple | None = None
    x0: float = 0.0
    width: float = 5.0
    path: str | None = None
    seed: int = 0
    noise: float = 0.0

    @classmethod
    def from_config(cls, spec: InitialSpec) -> "InitialDataSpec":
        try:
            kind = Kind(spec.kind)
        except ValueError:
            raise ConfigError(f"unknown initial kind {spec.kind!r}", "initial.kind") from None
        xi = spec.xi
        if xi is not None:
            xi = tuple(np.atleast_1d(np.asarray(xi, float)))
        center = None if spec.center is None else tuple(float(c) for c in spec.center)
        return cls(kind, float(spec.amplitude), float(spec.v_amplitude), float(spec.radius),
                   center, xi, float(spec.x0), float(spec.width), spec.path, int(spec.seed),
                   float(spec.noise))

    def direction(self, dim: int) -> np.ndarray:
        if self.xi is None:
            return np.eye(dim)[0]
        xi = np.asarray(self.xi, float)
        if xi.size != dim:
            raise ConfigError("initial.xi has wrong dimension", "initial.xi")
        norm = np.linalg.norm(xi)
        if not np.isclose(norm, 1.0, rtol=1e-12):
            raise ConfigError("initial.xi must be a unit vector", "initial.xi")
        return xi


def _check_clearance(grid: Grid, lo_reach: np.ndarray, hi_reach: np.ndarray, margin: float = 0.1):
    for ax in range(grid.dim):
        width = grid.hi[ax] - grid.lo[ax]
        if lo_reach[ax] < grid.lo[ax] + margin * width or hi_reach[ax] > grid.hi[ax] - margin * width:
            raise ConfigError(
                f"initial support [{lo_reach[ax]:g}, {hi_reach[ax]:g}] on axis {ax} leaves less "
                f"than {margin:.0%} clearance in [{grid.lo[ax]:g}, {grid.hi[ax]:g}]", "initial")


def _shape(spec: InitialDataSpec, grid: Grid) -> np.ndarray:
    if spec.kind is Kind.COMPACT_BUMP:
        if spec.radius <= 0:
            raise ConfigError("radius must be positive", "initial.radius")
        center = np.zeros(grid.dim) if spec.center is None else np.asarray(spec.center, float)
        _check_clearance(grid, center - spec.radius, center + spec.radius)
        return bump(grid.radius(center), spec.radius)
    if spec.width <= 0:
        raise ConfigError("width must be positive", "initial.width")
    xi = spec.direction(grid.dim)
    s = grid.project(xi)
    if spec.kind is Kind.FRONT_LIKE:
        edge = spec.x0 + spec.width
        # the vanishing side must sit inside the box with margin
        reach = float(s.max())
        lo = float(s.min())
        if edge > reach - 0.1 * (reach - lo):
            raise ConfigError("front-like interface too close to the wall", "initial.x0")
        return smooth_cutoff((s - spec.x0) / spec.width)
    if spec.kind is Kind.TWO_SIDED:
        if spec.radius <= 0:
            raise ConfigError("slab half-width must be positive", "initial.radius")
        lo, hi = float(s.min()), float(s.max())
        half = spec.radius + spec.width
        margin = 0.1 * (hi - lo)
        if spec.x0 - half < lo + margin or spec.x0 + half > hi - margin:
            raise ConfigError("two-sided slab leaves no clearance", "initial")
        d = s - spec.x0
        return smooth_cutoff((d - spec.radius) / spec.width) * smooth_cutoff((-d - spec.radius) / spec.width)
    raise ConfigError(f"no analytic shape for {spec.kind.value}", "initial.kind")


def build_initial(spec: InitialDataSpec | InitialSpec, grid: Grid) -> State:
    if isinstance(spec, InitialSpec):
        spec = InitialDataSpec.from_config(spec)
    if spec.kind is Kind.CUSTOM:
        if not spec.path:
            raise ConfigError("custom initial data needs a path", "initial.path")
        try:
            data = np.load(Path(spec.path))
            u, v = np.asarray(data["u"], float), np.asarray(data["v"], float)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load custom data: {exc}", "initial.path") from exc
        if u.size != np.prod(grid.shape) or v.size != u.size:
            raise ConfigError("custom data does not match the grid", "initial.path")
        if u.min() < 0 or v.min() < 0:
            raise ConfigError("custom data must be nonnegative", "initial.path")
        return State.from_arrays(grid, u.reshape(grid.shape), v.reshape(grid.shape))
    shape = _shape(spec, grid)
    if spec.noise:
        rng = np.random.default_rng(spec.seed)
        shape = shape * (1 + spec.noise * rng.random(grid.shape))
    return State.from_arrays(grid, spec.amplitude * shape, spec.v_amplitude * shape)


# membership predicates, evaluated on the grid

def is_compact_class(state: State) -> bool:
    u, v = state.u.values, state.v.values
    if u.min() < 0 or v.min() < 0 or not (u > 0).any():
        return False
    support = (u > 0) | (v > 0)
    # nothing may touch the walls
    for ax in range(u.ndim):
        edge = np.take(support, [0, -1], axis=ax)
        if edge.any():
            return False
    return True


def is_front_like(state: State, xi) -> bool:
    s = state.grid.project(np.atleast_1d(xi))
    u = state.u.values
    far_back = s <= s.min() + 0.05 * (s.max() - s.min())
    far_ahead = s >= s.max() - 0.05 * (s.max() - s.min())
    return bool(u.min() >= 0 and u[far_back].min() > 0 and np.all(u[far_ahead] == 0))


def is_two_sided(state: State, xi, r: float, center: float = 0.0) -> bool:
    s = state.grid.project(np.atleast_1d(xi)) - center
    u = state.u.values
    inner = np.abs(s) < r
    outer = np.abs(s) >= 0.9 * np.abs(s).max()
    return bool(u.min() >= 0 and inner.any() and u[inner].min() > 0 and np.all(u[outer] == 0))

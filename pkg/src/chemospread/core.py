"""Shared domain types: PDE parameters, tensor grids, fields and run records."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

NEGATIVITY_TOL = 1e-10


class DomainError(ValueError):
    """Argument outside the domain of a closed-form quantity."""


class GridMismatch(ValueError):
    pass


class SchemeFailure(RuntimeError):
    """Negativity beyond tolerance: the discretization broke positivity."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class UnstableStep(SchemeFailure):
    """NaN or Inf appeared in the state."""


class Boundary(str, enum.Enum):
    NEUMANN = "neumann"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Params:
    """Constants of the chemotaxis system with logistic source.

    u_t = Δu − χ∇·(u∇v) + u(a − bu),   v_t = Δv − λv + μu   on R^dim.
    """

    chi: float
    a: float
    b: float
    lam: float
    mu: float
    dim: int = 1

    def __post_init__(self):
        for name in ("a", "b", "lam", "mu"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val!r}")
        if not (math.isfinite(self.chi) and self.chi >= 0):
            raise ValueError(f"chi must be nonnegative, got {self.chi!r}")
        if int(self.dim) != self.dim or not 1 <= self.dim <= 3:
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim!r}")

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {"chi": self.chi, "a": self.a, "b": self.b, "lam": self.lam,
                "mu": self.mu, "dim": self.dim}


def damping_condition(params: Params) -> bool:
    """True iff b > N·μ·χ/4, the hypothesis under which the spreading speed is 2√a."""
    return params.b > params.dim * params.mu * params.chi / 4


def steady_state(params: Params) -> tuple[float, float]:
    """Positive constant equilibrium (a/b, μa/(λb))."""
    u = params.a / params.b
    return u, params.mu * params.a / (params.lam * params.b)


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the box prod_i [lo_i, hi_i].

    Neumann grids are vertex-centred (nodes on both walls); periodic grids
    drop the duplicate node at ``hi``.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]
    boundary: Boundary = Boundary.NEUMANN

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lo))
        hi = tuple(float(x) for x in np.atleast_1d(self.hi))
        n = tuple(int(x) for x in np.atleast_1d(self.n))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if not (len(lo) == len(hi) == len(n)) or not 1 <= len(n) <= 3:
            raise ValueError("lo, hi, n must have equal length 1..3")
        for a, b, m in zip(lo, hi, n):
            if not b > a:
                raise ValueError(f"need hi > lo per axis, got [{a}, {b}]")
            if m < 8:
                raise ValueError(f"need at least 8 points per axis, got {m}")

    @classmethod
    def uniform(cls, dim: int, half_width: float, n: int,
                boundary: Boundary | str = Boundary.NEUMANN) -> "Grid":
        return cls((-half_width,) * dim, (half_width,) * dim, (n,) * dim, Boundary(boundary))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def dx(self) -> tuple[float, ...]:
        if self.boundary is Boundary.PERIODIC:
            return tuple((b - a) / m for a, b, m in zip(self.lo, self.hi, self.n))
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lo, self.hi, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    def axis(self, i: int) -> np.ndarray:
        return self.lo[i] + self.dx[i] * np.arange(self.n[i])

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for i in range(self.dim):
            shape = [1] * self.dim
            shape[i] = self.n[i]
            out.append(self.axis(i).reshape(shape))
        return out

    def radius(self, center=None) -> np.ndarray:
        xs = self.coords()
        center = np.zeros(self.dim) if center is None else np.asarray(center, float)
        r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
        return np.sqrt(np.broadcast_to(r2, self.shape))

    def project(self, xi) -> np.ndarray:
        """x·ξ at every node."""
        xi = np.asarray(xi, float).reshape(-1)
        if xi.size != self.dim:
            raise ValueError("direction has wrong dimension")
        return np.broadcast_to(sum(x * c for x, c in zip(self.coords(), xi)), self.shape)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (Neumann) or uniform weights (periodic)."""
        w = np.ones(self.shape)
        if self.boundary is Boundary.NEUMANN:
            for ax in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[ax] = 0
                w[tuple(idx)] *= 0.5
                idx[ax] = -1
                w[tuple(idx)] *= 0.5
        return w * self.cell_volume

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def to_dict(self) -> dict[str, Any]:
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n),
                "boundary": self.boundary.value}


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != int(np.prod(self.grid.shape)):
            raise GridMismatch(f"{values.size} values for grid {self.grid.shape}")
        self.values = values.reshape(self.grid.shape)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


@dataclass
class State:
    u: Field
    v: Field
    t: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise GridMismatch("u and v live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def from_arrays(cls, grid: Grid, u, v, t: float = 0.0) -> "State":
        return cls(Field(grid, u), Field(grid, v), float(t))

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy(), self.t)


def enforce_nonnegative(values: np.ndarray, t: float | None = None,
                        tol: float = NEGATIVITY_TOL) -> int:
    """Clip undershoot in [−tol, 0) to zero in place; return the clip count.

    Raises SchemeFailure for anything below −tol and UnstableStep for NaN/Inf.
    """
    if not np.isfinite(values).all():
        raise UnstableStep("non-finite value in state", t)
    low = values.min()
    if low < -tol:
        raise SchemeFailure(f"negativity {low:.3e} below tolerance {tol:.0e}", t)
    neg = values < 0
    count = int(neg.sum())
    if count:
        values[neg] = 0.0
    return count


@dataclass
class Snapshot:
    t: float
    stats: dict[str, float]


@dataclass
class RunRecord:
    params: Params
    grid: Grid
    scheme: dict[str, Any]
    snapshots: list[Snapshot] = field(default_factory=list)
    fronts: dict[str, Any] = field(default_factory=dict)
    termination: str = "pending"
    warnings: list[str] = field(default_factory=list)
    trusted_until: float = math.inf
    states: list[State] = field(default_factory=list)
    monitors: dict[str, Any] = field(default_factory=dict)
    final: State | None = None
    steps: int = 0

    def add_snapshot(self, t: float, stats: dict[str, float]):
        if self.snapshots and t <= self.snapshots[-1].t:
            raise ValueError("snapshot times must be strictly increasing")
        self.snapshots.append(Snapshot(t, stats))

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

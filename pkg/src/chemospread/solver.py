"""IMEX finite-difference solver for the parabolic-parabolic chemotaxis system.

Diffusion (and the linear decay of v) is implicit; chemotactic flux, logistic
reaction and the moving-frame drift are explicit. Neumann boxes use
vertex-centred stencils and per-axis tridiagonal solves, periodic boxes are
diagonalized with the FFT.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .core import (
    Boundary,
    Field,
    Grid,
    GridMismatch,
    Params,
    RunRecord,
    SchemeFailure,
    State,
    UnstableStep,
    enforce_nonnegative,
)


class DtPolicy(str, enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class FluxScheme(str, enum.Enum):
    CENTRAL = "central"
    UPWIND = "upwind"


class Integrator(str, enum.Enum):
    BACKWARD_EULER = "backward_euler"
    CRANK_NICOLSON = "crank_nicolson"


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 0.01
    dt_policy: DtPolicy = DtPolicy.ADAPTIVE
    safety: float = 0.4
    flux: FluxScheme = FluxScheme.UPWIND
    diffusion: Integrator = Integrator.BACKWARD_EULER
    frame_speed: float = 0.0
    frame_direction: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "dt_policy", DtPolicy(self.dt_policy))
        object.__setattr__(self, "flux", FluxScheme(self.flux))
        object.__setattr__(self, "diffusion", Integrator(self.diffusion))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety factor must lie in (0, 1]")
        if self.frame_direction is not None:
            xi = tuple(float(x) for x in self.frame_direction)
            object.__setattr__(self, "frame_direction", xi)
            if self.frame_speed != 0 and not math.isclose(math.hypot(*xi), 1.0, rel_tol=1e-12):
                raise ValueError("frame direction must be a unit vector")

    def direction(self, dim: int) -> np.ndarray:
        if self.frame_direction is None:
            return np.eye(dim)[0]
        xi = np.asarray(self.frame_direction, float)
        if xi.size != dim:
            raise ValueError("frame direction has wrong dimension")
        return xi

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "dt_policy": self.dt_policy.value,
            "safety": self.safety,
            "flux": self.flux.value,
            "diffusion": self.diffusion.value,
            "frame_speed": self.frame_speed,
            "frame_direction": None if self.frame_direction is None else list(self.frame_direction),
        }


@dataclass
class StepReport:
    dt: float
    max_u: float
    max_v: float
    max_grad_v: float
    cfl_advective: float
    cfl_chemotactic: float
    clipped: int


def fisher_kpp_mode(params: Params) -> Params:
    """Switch chemotaxis off; v is still evolved but no longer feeds back on u."""
    return replace(params, chi=0.0)


# ---------------------------------------------------------------- stencils

def _pad(values: np.ndarray, axis: int, boundary: Boundary) -> np.ndarray:
    width = [(0, 0)] * values.ndim
    width[axis] = (1, 1)
    return np.pad(values, width, mode="reflect" if boundary is Boundary.NEUMANN else "wrap")


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order Laplacian; Neumann walls by even reflection."""
    out = np.zeros_like(values)
    nd = values.ndim
    for ax, h in enumerate(grid.dx):
        p = _pad(values, ax, grid.boundary)
        out += (p[_sl(nd, ax, slice(2, None))] - 2 * values + p[_sl(nd, ax, slice(None, -2))]) / h ** 2
    return out


def gradient(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Centred node gradient; zero normal derivative on Neumann walls."""
    nd = values.ndim
    out = []
    for ax, h in enumerate(grid.dx):
        p = _pad(values, ax, grid.boundary)
        out.append((p[_sl(nd, ax, slice(2, None))] - p[_sl(nd, ax, slice(None, -2))]) / (2 * h))
    return out


def _face_differences(values: np.ndarray, grid: Grid, ax: int) -> np.ndarray:
    h = grid.dx[ax]
    if grid.boundary is Boundary.PERIODIC:
        return (np.roll(values, -1, axis=ax) - values) / h
    return np.diff(values, axis=ax) / h


def _face_upwind(u: np.ndarray, g: np.ndarray, grid: Grid, ax: int, scheme: FluxScheme) -> np.ndarray:
    if grid.boundary is Boundary.PERIODIC:
        left, right = u, np.roll(u, -1, axis=ax)
    else:
        nd = u.ndim
        left, right = u[_sl(nd, ax, slice(None, -1))], u[_sl(nd, ax, slice(1, None))]
    mean = 0.5 * (left + right)
    if scheme is FluxScheme.CENTRAL:
        return mean
    return np.where(g > 0, left, np.where(g < 0, right, mean))


def _divergence(flux: np.ndarray, grid: Grid, ax: int) -> np.ndarray:
    h = grid.dx[ax]
    if grid.boundary is Boundary.PERIODIC:
        return (flux - np.roll(flux, 1, axis=ax)) / h
    nd = flux.ndim
    shape = list(flux.shape)
    shape[ax] += 1
    out = np.zeros(shape)
    out[_sl(nd, ax, slice(1, -1))] = (flux[_sl(nd, ax, slice(1, None))] - flux[_sl(nd, ax, slice(None, -1))]) / h
    # wall nodes own half a cell
    out[_sl(nd, ax, slice(0, 1))] = flux[_sl(nd, ax, slice(0, 1))] / (h / 2)
    out[_sl(nd, ax, slice(-1, None))] = -flux[_sl(nd, ax, slice(-1, None))] / (h / 2)
    return out


def chemotactic_divergence(u: np.ndarray, v: np.ndarray, grid: Grid,
                           scheme: FluxScheme = FluxScheme.UPWIND) -> np.ndarray:
    """∇·(u∇v) from face fluxes u_face·(∂v)_face; telescopes to zero total mass."""
    scheme = FluxScheme(scheme)
    out = np.zeros_like(u)
    for ax in range(grid.dim):
        g = _face_differences(v, grid, ax)
        out += _divergence(_face_upwind(u, g, grid, ax, scheme) * g, grid, ax)
    return out


def drift(values: np.ndarray, grid: Grid, velocity: np.ndarray,
          scheme: FluxScheme = FluxScheme.UPWIND) -> np.ndarray:
    """velocity·∇values; upwinded for transport in the direction −velocity."""
    scheme = FluxScheme(scheme)
    out = np.zeros_like(values)
    nd = values.ndim
    for ax, h in enumerate(grid.dx):
        alpha = float(velocity[ax])
        if alpha == 0:
            continue
        p = _pad(values, ax, grid.boundary)
        if scheme is FluxScheme.CENTRAL:
            d = (p[_sl(nd, ax, slice(2, None))] - p[_sl(nd, ax, slice(None, -2))]) / (2 * h)
        elif alpha > 0:
            d = (p[_sl(nd, ax, slice(2, None))] - values) / h
        else:
            d = (values - p[_sl(nd, ax, slice(None, -2))]) / h
        out += alpha * d
    return out


def _check_grid(state: State, grid: Grid | None = None):
    if state.u.grid != state.v.grid or (grid is not None and grid != state.u.grid):
        raise GridMismatch("u and v must share one grid")


def _explicit_u(u, v, grid, params, scheme):
    out = u * (params.a - params.b * u)
    if params.chi:
        out -= params.chi * chemotactic_divergence(u, v, grid, scheme.flux)
    if scheme.frame_speed:
        out += drift(u, grid, scheme.frame_speed * scheme.direction(grid.dim), scheme.flux)
    return out


def _explicit_v(u, v, grid, params, scheme):
    out = params.mu * u
    if scheme.frame_speed:
        out = out + drift(v, grid, scheme.frame_speed * scheme.direction(grid.dim), scheme.flux)
    return out


def rhs_u(state: State, params: Params, scheme: SchemeConfig) -> Field:
    """Semi-discrete right-hand side of the u equation."""
    _check_grid(state)
    g = state.grid
    u, v = state.u.values, state.v.values
    return Field(g, laplacian(u, g) + _explicit_u(u, v, g, params, scheme))


def rhs_v(state: State, params: Params, scheme: SchemeConfig) -> Field:
    _check_grid(state)
    g = state.grid
    u, v = state.u.values, state.v.values
    return Field(g, laplacian(v, g) - params.lam * v + _explicit_v(u, v, g, params, scheme))


# ------------------------------------------------------- implicit diffusion

@lru_cache(maxsize=64)
def _neumann_band(n: int, r: float) -> np.ndarray:
    """Banded form of I − r·T, T the Neumann second-difference matrix."""
    ab = np.empty((3, n))
    ab[0, :] = -r
    ab[1, :] = 1 + 2 * r
    ab[2, :] = -r
    ab[0, 1] = -2 * r
    ab[2, n - 2] = -2 * r
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    ab.setflags(write=False)
    return ab


def _solve_axis(values: np.ndarray, ax: int, r: float) -> np.ndarray:
    moved = np.moveaxis(values, ax, 0)
    shape = moved.shape
    flat = moved.reshape(shape[0], -1)
    sol = solve_banded((1, 1), _neumann_band(shape[0], r), flat,
                       overwrite_b=False, check_finite=False)
    return np.moveaxis(sol.reshape(shape), 0, ax)


def _apply_axis(values: np.ndarray, grid: Grid, ax: int, r: float) -> np.ndarray:
    """(I + r·T) along one axis."""
    nd = values.ndim
    p = _pad(values, ax, grid.boundary)
    return values + r * (p[_sl(nd, ax, slice(2, None))] - 2 * values + p[_sl(nd, ax, slice(None, -2))])


@lru_cache(maxsize=16)
def _symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of the periodic discrete Laplacian on the rfftn lattice."""
    total = 0.0
    for ax, (m, h) in enumerate(zip(grid.n, grid.dx)):
        freq = np.fft.rfftfreq(m) if ax == grid.dim - 1 else np.fft.fftfreq(m)
        lam = (2 * np.cos(2 * np.pi * freq) - 2) / h ** 2
        shape = [1] * grid.dim
        shape[ax] = lam.size
        total = total + lam.reshape(shape)
    return np.asarray(total)


def diffuse(values: np.ndarray, grid: Grid, dt: float,
            integrator: Integrator = Integrator.BACKWARD_EULER,
            source: np.ndarray | None = None, decay: float = 0.0) -> np.ndarray:
    """One implicit step of w_t = Δw − decay·w + source (source frozen).

    Multi-axis Neumann grids use per-axis factors; the axis operators commute,
    so the splitting keeps the integrator's order.
    """
    integrator = Integrator(integrator)
    extra = 0.0 if source is None else dt * source
    if integrator is Integrator.BACKWARD_EULER:
        rhs = values + extra
        theta, post = 1.0, 1.0 / (1.0 + decay * dt)
    else:
        theta = 0.5
        post = 1.0 / (1.0 + 0.5 * decay * dt)
    if grid.boundary is Boundary.PERIODIC:
        sym = _symbol(grid)
        if integrator is Integrator.BACKWARD_EULER:
            hat = np.fft.rfftn(rhs) / (1 - dt * sym)
        else:
            hat = (np.fft.rfftn(values) * (1 + 0.5 * dt * sym) * (1 - 0.5 * decay * dt)
                   + (np.fft.rfftn(extra) if source is not None else 0.0)) / (1 - 0.5 * dt * sym)
        return np.fft.irfftn(hat, s=values.shape, axes=range(values.ndim)) * post
    if integrator is Integrator.CRANK_NICOLSON:
        rhs = values
        for ax, h in enumerate(grid.dx):
            rhs = _apply_axis(rhs, grid, ax, theta * dt / h ** 2)
        rhs = rhs * (1 - 0.5 * decay * dt) + extra
    out = rhs
    for ax, h in enumerate(grid.dx):
        out = _solve_axis(out, ax, theta * dt / h ** 2)
    return out * post


# ------------------------------------------------------------- time stepping

def max_grad(v: np.ndarray, grid: Grid) -> float:
    m = 0.0
    for ax in range(grid.dim):
        g = _face_differences(v, grid, ax)
        if g.size:
            m = max(m, float(np.abs(g).max()))
    return m


def choose_dt(state: State, params: Params, scheme: SchemeConfig) -> float:
    if scheme.dt_policy is DtPolicy.FIXED:
        return scheme.dt
    h = min(state.grid.dx)
    speed = abs(scheme.frame_speed) + params.chi * max_grad(state.v.values, state.grid)
    bounds = [1.0 / (2 * params.a)]
    if speed > 0:
        bounds.append(h / speed)
    return min(scheme.dt, scheme.safety * min(bounds))


def step(state: State, params: Params, scheme: SchemeConfig,
         dt: float | None = None) -> tuple[State, StepReport]:
    """Advance (u, v) by one IMEX step."""
    _check_grid(state)
    g = state.grid
    if dt is None:
        dt = choose_dt(state, params, scheme)
    u, v = state.u.values, state.v.values
    eu = _explicit_u(u, v, g, params, scheme)
    ev = _explicit_v(u, v, g, params, scheme)
    u_new = diffuse(u, g, dt, scheme.diffusion, source=eu)
    v_new = diffuse(v, g, dt, scheme.diffusion, source=ev, decay=params.lam)
    t_new = state.t + dt
    if not (np.isfinite(u_new).all() and np.isfinite(v_new).all()):
        raise UnstableStep("non-finite value after step", t_new)
    clipped = enforce_nonnegative(u_new, t_new) + enforce_nonnegative(v_new, t_new)
    h = min(g.dx)
    gv = max_grad(v_new, g)
    report = StepReport(
        dt=dt,
        max_u=float(u_new.max()),
        max_v=float(v_new.max()),
        max_grad_v=gv,
        cfl_advective=abs(scheme.frame_speed) * dt / h,
        cfl_chemotactic=params.chi * gv * dt / h,
        clipped=clipped,
    )
    return State(Field(g, u_new), Field(g, v_new), t_new), report


class Observer:
    """Hook called by :func:`run`. Subclasses override what they need."""

    def next_time(self, t: float) -> float:
        return math.inf

    def on_start(self, state: State, record: RunRecord):
        pass

    def on_step(self, prev: State, state: State, report: StepReport, record: RunRecord):
        pass

    def on_finish(self, state: State, record: RunRecord):
        pass


def summary_stats(state: State) -> dict[str, float]:
    u, v = state.u.values, state.v.values
    w = state.grid.quadrature_weights()
    return {
        "max_u": float(u.max()),
        "min_u": float(u.min()),
        "max_v": float(v.max()),
        "min_v": float(v.min()),
        "mass_u": float((w * u).sum()),
        "mass_v": float((w * v).sum()),
    }


@dataclass
class SnapshotObserver(Observer):
    """Records summary statistics (and optionally full states) every ``every`` time units."""

    every: float
    keep_states: bool = False
    _next: float = field(default=0.0, init=False)

    def next_time(self, t: float) -> float:
        return self._next

    def _take(self, state: State, record: RunRecord):
        record.add_snapshot(state.t, summary_stats(state))
        if self.keep_states:
            record.states.append(state.copy())
        self._next = state.t + self.every

    def on_start(self, state, record):
        self._take(state, record)

    def on_step(self, prev, state, report, record):
        if state.t >= self._next - 1e-9 * self.every:
            self._take(state, record)


_TIME_EPS = 1e-10


def run(initial: State, params: Params, scheme: SchemeConfig, horizon: float,
        observers: list[Observer] | tuple = (), max_steps: int | None = None) -> RunRecord:
    """Step from ``initial`` up to ``horizon`` time units past its start.

    Steps are shortened so that they land exactly on every observer's next
    requested time and on the horizon.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    record = RunRecord(params=params, grid=initial.grid, scheme=scheme.to_dict())
    observers = list(observers)
    if not any(isinstance(o, SnapshotObserver) for o in observers):
        observers.insert(0, SnapshotObserver(every=max(horizon, 1.0)))
    state = initial.copy()
    for obs in observers:
        obs.on_start(state, record)
    t_end = initial.t + horizon
    steps = 0
    try:
        while t_end - state.t > _TIME_EPS * max(1.0, abs(t_end)):
            dt = choose_dt(state, params, scheme)
            target = min([t_end] + [o.next_time(state.t) for o in observers])
            if target > state.t and target - state.t <= dt * (1 + 1e-9):
                dt = target - state.t
                land = target
            else:
                land = None
            new, report = step(state, params, scheme, dt)
            if land is not None:
                new.t = land
            steps += 1
            for obs in observers:
                obs.on_step(state, new, report, record)
            state = new
            if max_steps is not None and steps >= max_steps:
                record.termination = "max_steps"
                break
        else:
            record.termination = "horizon"
    except SchemeFailure as exc:
        record.termination = f"failure: {exc}"
        record.final = state
        record.steps = steps
        exc.record = record
        raise
    record.final = state
    record.steps = steps
    if record.snapshots[-1].t < state.t:
        record.add_snapshot(state.t, summary_stats(state))
        for obs in observers:
            if isinstance(obs, SnapshotObserver) and obs.keep_states:
                record.states.append(state.copy())
    for obs in observers:
        obs.on_finish(state, record)
    return record

"""Front tracking, speed fits and numerical checks of the spreading inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .core import Boundary, Field, Grid, Params, RunRecord, State
from .solver import Observer, StepReport, gradient, laplacian
from .theory import kpp_speed


class NoFront(ValueError):
    """The threshold is not attained anywhere on the profile."""


class InsufficientSamples(ValueError):
    pass


# ------------------------------------------------------------------ fronts

def _profile(field: Field, direction) -> tuple[np.ndarray, np.ndarray]:
    """Reduce a field to (offsets, values) along a ray by max over level sets.

    ``direction`` is +1/−1 for a 1D axis, a unit vector, or "radial".
    """
    grid = field.grid
    u = field.values
    if grid.dim == 1 and not isinstance(direction, str):
        sign = float(np.asarray(direction, float).reshape(-1)[0])
        x = grid.axis(0)
        if sign > 0:
            return x, u
        return -x[::-1], u[::-1]
    h = min(grid.dx)
    if isinstance(direction, str):
        if direction != "radial":
            raise ValueError(f"unknown direction {direction!r}")
        s = grid.radius()
        origin = 0.0
    else:
        s = grid.project(direction)
        origin = float(s.min())
    idx = np.rint((s - origin) / h).astype(np.int64).ravel()
    prof = np.full(idx.max() + 1, -np.inf)
    np.maximum.at(prof, idx, u.ravel())
    offsets = origin + h * np.arange(prof.size)
    keep = np.isfinite(prof)
    return offsets[keep], prof[keep]


def _last_crossing(s: np.ndarray, u: np.ndarray, threshold: float) -> float:
    above = np.nonzero(u >= threshold)[0]
    if above.size == 0:
        raise NoFront(f"threshold {threshold} never attained (max {u.max():.3g})")
    i = above[-1]
    if i == u.size - 1:
        return float(s[i])
    frac = (u[i] - threshold) / (u[i] - u[i + 1])
    return float(s[i] + frac * (s[i + 1] - s[i]))


def front_position(field: Field, threshold: float, direction=1) -> float:
    """Outermost linear-interpolated crossing of ``threshold`` along ``direction``."""
    s, u = _profile(field, direction)
    return _last_crossing(s, u, threshold)


def front_positions_two_sided(field: Field, threshold: float, xi=1) -> tuple[float, float]:
    """(position along −ξ, position along +ξ) for data spreading both ways."""
    if isinstance(xi, (int, float)):
        xi = np.array([float(xi)])
    xi = np.asarray(xi, float)
    back = -xi if field.grid.dim > 1 else -xi[0]
    fwd = xi if field.grid.dim > 1 else xi[0]
    return front_position(field, threshold, back), front_position(field, threshold, fwd)


def wall_distance(grid: Grid, position: float, direction) -> float:
    if isinstance(direction, str):
        reach = min(min(-lo, hi) for lo, hi in zip(grid.lo, grid.hi))
    elif grid.dim == 1:
        sign = float(np.asarray(direction, float).reshape(-1)[0])
        reach = grid.hi[0] if sign > 0 else -grid.lo[0]
    else:
        reach = float(grid.project(direction).max())
    return reach - position


def direction_label(direction) -> str:
    """"+1"/"-1" on a line, "radial", or a bracketed unit vector."""
    if isinstance(direction, str):
        return direction
    arr = np.asarray(direction, float).reshape(-1)
    if arr.size == 1:
        return f"{arr[0]:+g}"
    return "(" + " ".join(repr(float(x)) for x in arr) + ")"


@dataclass
class FrontTrace:
    threshold: float
    direction: object
    times: list[float] = field(default_factory=list)
    positions: list[float] = field(default_factory=list)
    trusted: list[bool] = field(default_factory=list)

    def add(self, t: float, position: float, trusted: bool = True):
        if self.times and t <= self.times[-1]:
            raise ValueError("trace times must be strictly increasing")
        if not math.isfinite(position):
            raise ValueError("front position must be finite")
        self.times.append(float(t))
        self.positions.append(float(position))
        self.trusted.append(bool(trusted))

    @property
    def label(self) -> str:
        return direction_label(self.direction)

    def trusted_part(self) -> "FrontTrace":
        out = FrontTrace(self.threshold, self.direction)
        for t, p, ok in zip(self.times, self.positions, self.trusted):
            if not ok:
                break
            out.add(t, p, ok)
        return out


@dataclass
class SpeedFit:
    speed: float
    intercept: float
    t_start: float
    t_end: float
    residual_rms: float
    samples: int


def fit_speed(trace: FrontTrace, window_fraction: float = 0.5) -> SpeedFit:
    """Least-squares slope of position against time over the trailing window."""
    t = np.asarray(trace.times, float)
    x = np.asarray(trace.positions, float)
    if t.size < 2:
        raise InsufficientSamples("trace has fewer than 2 samples")
    start = t[-1] - window_fraction * (t[-1] - t[0])
    sel = t >= start - 1e-12 * max(1.0, abs(start))
    if sel.sum() < 5:
        raise InsufficientSamples(f"{int(sel.sum())} samples in window, need 5")
    tw, xw = t[sel], x[sel]
    A = np.column_stack([tw, np.ones_like(tw)])
    (slope, intercept), *_ = np.linalg.lstsq(A, xw, rcond=None)
    resid = xw - (slope * tw + intercept)
    return SpeedFit(float(slope), float(intercept), float(tw[0]), float(tw[-1]),
                    float(np.sqrt(np.mean(resid ** 2))), int(sel.sum()))


# ------------------------------------------------------ interior / exterior

def _region_coordinate(grid: Grid, region: str, xi) -> np.ndarray:
    if region == "ball":
        return grid.radius()
    xi = np.eye(grid.dim)[0] if xi is None else np.asarray(xi, float).reshape(-1)
    s = grid.project(xi)
    if region == "slab":
        return np.abs(s)
    if region == "halfspace":
        return s
    raise ValueError(f"unknown region {region!r}")


def interior_infimum(state: State, params: Params, eps: float, xi=None,
                     region: str = "ball", component: str = "u") -> float:
    """inf of u (or v) over {ρ(x) ≤ (2√a − ε)t}; ρ = |x|, |x·ξ| or x·ξ by ``region``."""
    rho = _region_coordinate(state.grid, region, xi)
    reach = (kpp_speed(params.a) - eps) * state.t
    inside = rho <= reach
    values = {"u": state.u, "v": state.v}[component].values
    if not inside.any():
        # empty at small t: fall back to the node closest to the origin
        return float(values.flat[np.argmin(np.abs(rho))])
    return float(values[inside].min())


@dataclass
class ExteriorSup:
    u: float
    v: float
    in_window: bool


def exterior_supremum(state: State, params: Params, eps: float, xi=None,
                      region: str = "ball") -> ExteriorSup:
    """sup of u and v over {ρ(x) ≥ (2√a + ε)t} inside the box."""
    rho = _region_coordinate(state.grid, region, xi)
    reach = (kpp_speed(params.a) + eps) * state.t
    outside = rho >= reach
    if not outside.any():
        return ExteriorSup(0.0, 0.0, False)
    return ExteriorSup(float(state.u.values[outside].max()),
                       float(state.v.values[outside].max()), True)


# ------------------------------------------------------ supersolution checks

def w_functional(state: State, params: Params) -> Field:
    """w = u + (χ/2μ)|∇v|²."""
    grads = gradient(state.v.values, state.grid)
    sq = sum(g * g for g in grads)
    return Field(state.grid, state.u.values + params.chi / (2 * params.mu) * sq)


def supersolution_residual(prev: State, nxt: State, params: Params,
                           flip_damping: bool = False) -> Field:
    """Discrete residual of w_t ≤ Δw + aw between consecutive states.

    ``flip_damping`` adds 2(b − Nμχ/4)u², i.e. evaluates the inequality
    as if the damping term had the opposite sign (negative control).
    """
    dt = nxt.t - prev.t
    if dt <= 0:
        raise ValueError("states must be in increasing time order")
    w0 = w_functional(prev, params).values
    w1 = w_functional(nxt, params).values
    avg = 0.5 * (w0 + w1)
    r = (w1 - w0) / dt - laplacian(avg, prev.grid) - params.a * avg
    if flip_damping:
        u_avg = 0.5 * (prev.u.values + nxt.u.values)
        r = r + 2 * (params.b - params.dim * params.mu * params.chi / 4) * u_avg ** 2
    return Field(prev.grid, r)


# residuals below this are roundoff (relative to the carrying capacity)
TAU_FLOOR = 1e-12


@dataclass
class TauCalibration:
    constant: float
    levels: list[tuple[float, float, float]]
    floor: float = TAU_FLOOR

    def tau(self, dx: float, dt: float) -> float:
        return max(3 * self.constant * (dx * dx + dt), self.floor)


def calibrate_tau(levels, scale: float = 1.0) -> TauCalibration:
    """Fit max residual ≈ C(dx² + dt) through the origin over refinement levels.

    ``scale`` (typically a/b) sets the roundoff floor of the tolerance.
    """
    levels = [(float(h), float(k), float(m)) for h, k, m in levels]
    if len(levels) < 2:
        raise InsufficientSamples("need at least two refinement levels")
    s = np.array([h * h + k for h, k, _ in levels])
    m = np.array([max(r, 0.0) for *_, r in levels])
    c = float(s @ m / (s @ s))
    return TauCalibration(c, levels, TAU_FLOOR * max(scale, 1.0))


def envelope_constants(state: State, params: Params, k: float, directions) -> tuple[float, float]:
    """Smallest (M, d) with w₀ ≤ M e^{−k x·ξ}, v₀ ≤ d e^{−k x·ξ} for every listed ξ,
    and d ≥ μM/(a + λ)."""
    w = w_functional(state, params).values
    v = state.v.values
    grid = state.grid
    # minimum over directions of e^{-k x·ξ} is e^{-k max_ξ x·ξ}
    proj = np.max([grid.project(np.atleast_1d(xi)) for xi in directions], axis=0)
    big_m = float((w * np.exp(k * proj)).max())
    d_data = float((v * np.exp(k * proj)).max())
    d = max(params.mu * big_m / (params.a + params.lam), d_data)
    return big_m, d


@dataclass
class EnvelopeReport:
    max_violation_w: float
    max_violation_v: float
    where: tuple | None = None

    @property
    def max_violation(self) -> float:
        return max(self.max_violation_w, self.max_violation_v)


class EnvelopePreconditionError(ValueError):
    pass


def _envelope(grid: Grid, directions, k: float, speed: float, t: float) -> np.ndarray:
    """min over ξ of exp(−k(x·ξ − ct)); ξ and −ξ together give the two-sided envelope."""
    proj = np.max([grid.project(np.atleast_1d(xi)) for xi in directions], axis=0)
    return np.exp(-k * (proj - speed * t))


def envelope_check(state: State, params: Params, k: float, big_m: float, d: float,
                   directions, t0: float = 0.0) -> EnvelopeReport:
    """Compare w and v with M e^{−k(x·ξ − ct)} and d e^{−k(x·ξ − ct)}, c = (k² + a)/k.

    Pass ξ and −ξ in ``directions`` for two-sided data. At t = t0 any
    violation is a precondition failure and raises with its location.
    """
    c = (k * k + params.a) / k
    env = _envelope(state.grid, directions, k, c, state.t - t0)
    w = w_functional(state, params).values
    vw = w - big_m * env
    vv = state.v.values - d * env
    if state.t - t0 <= 0:
        for name, viol in (("w", vw), ("v", vv)):
            if viol.max() > 1e-12 * max(1.0, big_m):
                i = np.unravel_index(int(np.argmax(viol)), viol.shape)
                raise EnvelopePreconditionError(
                    f"initial {name} exceeds envelope by {viol.max():.3g} at index {i}")
    i = np.unravel_index(int(np.argmax(np.maximum(vw, vv))), vw.shape)
    return EnvelopeReport(max(float(vw.max()), 0.0), max(float(vv.max()), 0.0), tuple(int(j) for j in i))


# ------------------------------------------------------------ Duhamel oracle

def _heat_semigroup(values: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    """Exact heat flow for time s applied to the spectral interpolant of ``values``."""
    if s == 0:
        return values.copy()
    if grid.boundary is Boundary.PERIODIC:
        hat = np.fft.fftn(values)
        mult = 1.0
        for ax, (m, h) in enumerate(zip(grid.n, grid.dx)):
            k = 2 * np.pi * np.fft.fftfreq(m, d=h)
            shape = [1] * grid.dim
            shape[ax] = m
            mult = mult * np.exp(-(k ** 2) * s).reshape(shape)
        return np.real(np.fft.ifftn(hat * mult))
    hat = sfft.dctn(values, type=1)
    mult = 1.0
    for ax, (m, h) in enumerate(zip(grid.n, grid.dx)):
        k = np.pi * np.arange(m) / ((m - 1) * h)
        shape = [1] * grid.dim
        shape[ax] = m
        mult = mult * np.exp(-(k ** 2) * s).reshape(shape)
    return sfft.idctn(hat * mult, type=1)


def duhamel_v_oracle(times, u_history, v0: Field, params: Params, t: float | None = None) -> Field:
    """v(t) = e^{−λt} G_t * v₀ + μ ∫₀ᵗ e^{−λ(t−τ)} G_{t−τ} * u(τ) dτ.

    Heat flow is applied spectrally (periodic FFT or Neumann cosine transform)
    and the time integral uses the trapezoid rule on the history nodes.
    """
    times = np.asarray(times, float)
    if times.size < 3 or len(u_history) != times.size:
        raise InsufficientSamples("need at least three matching history samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("history times must be increasing")
    t = times[-1] if t is None else float(t)
    if abs(times[0]) > 1e-12 or abs(times[-1] - t) > 1e-9 * max(1.0, t):
        raise InsufficientSamples("history must span [0, t]")
    grid = v0.grid
    lam, mu = params.lam, params.mu
    out = math.exp(-lam * t) * _heat_semigroup(v0.values, grid, t)
    weights = np.empty(times.size)
    gaps = np.diff(times)
    weights[0] = gaps[0] / 2
    weights[-1] = gaps[-1] / 2
    weights[1:-1] = (gaps[:-1] + gaps[1:]) / 2
    for wgt, tau, u in zip(weights, times, u_history):
        lag = t - tau
        u = u.values if isinstance(u, Field) else np.asarray(u, float)
        out = out + mu * wgt * math.exp(-lam * lag) * _heat_semigroup(u, grid, lag)
    return Field(grid, out)


# ------------------------------------------------------------- persistence

@dataclass
class PersistenceReport:
    triggered: bool
    t_trigger: float | None = None
    delta: float | None = None
    delta_after_burn_in: float | None = None
    never_below_half: bool | None = None
    running_min: list[tuple[float, float]] = field(default_factory=list)


def ball_mask(grid: Grid, center, radius: float) -> np.ndarray:
    return grid.radius(center) <= radius


def persistence_check(series, eta: float, burn_in: float = 5.0) -> PersistenceReport:
    """Measure the persistence floor from (t, sup_ball u, inf_ball u) samples.

    Trigger t₀ is the first sample with sup ≥ η; δ is the infimum over the
    ball on [t₀, end]. ``never_below_half`` asks that the ball infimum stays
    above δ/2 on [t₀ + burn_in, end].
    """
    series = [(float(t), float(s), float(i)) for t, s, i in series]
    trig = next((k for k, (_, s, _) in enumerate(series) if s >= eta), None)
    if trig is None:
        return PersistenceReport(triggered=False)
    t0 = series[trig][0]
    tail = series[trig:]
    delta = min(i for _, _, i in tail)
    late = [i for t, _, i in tail if t >= t0 + burn_in - 1e-9]
    running, cur = [], math.inf
    for t, _, i in tail:
        cur = min(cur, i)
        running.append((t, cur))
    return PersistenceReport(
        triggered=True,
        t_trigger=t0,
        delta=delta,
        delta_after_burn_in=min(late) if late else None,
        never_below_half=all(i >= 0.5 * delta for i in late),
        running_min=running,
    )


def persistence_series(states, center, radius: float):
    out = []
    for st in states:
        mask = ball_mask(st.grid, center, radius)
        u = st.u.values[mask]
        out.append((st.t, float(u.max()), float(u.min())))
    return out


# --------------------------------------------------------------- observers

class _Cadence(Observer):
    def __init__(self, every: float):
        self.every = every
        self._next = 0.0

    def next_time(self, t):
        return self._next

    def due(self, t: float) -> bool:
        if t >= self._next - 1e-9 * self.every:
            self._next = t + self.every
            return True
        return False


class FrontTracker(_Cadence):
    """Samples front positions for several thresholds; flags loss of wall clearance."""

    def __init__(self, thresholds, direction=1, every: float = 0.5,
                 two_sided: bool = False, clearance: float = 0.1, name: str = "fronts"):
        super().__init__(every)
        self.thresholds = list(thresholds)
        self.direction = direction
        self.two_sided = two_sided
        self.clearance = clearance
        self.name = name
        self.traces: dict[tuple[float, str], FrontTrace] = {}

    def directions(self, grid):
        d = self.direction
        if not self.two_sided:
            return [("fwd", d)]
        if grid.dim == 1:
            sign = float(np.asarray(d, float).reshape(-1)[0])
            return [("back", -sign), ("fwd", sign)]
        xi = np.asarray(d, float)
        return [("back", -xi), ("fwd", xi)]

    def _sample(self, state: State, record: RunRecord):
        grid = state.grid
        width = min(h - l for l, h in zip(grid.lo, grid.hi))
        for side, d in self.directions(grid):
            for th in self.thresholds:
                key = (th, side)
                trace = self.traces.setdefault(key, FrontTrace(th, d))
                try:
                    pos = front_position(state.u, th, d)
                except NoFront:
                    continue
                ok = wall_distance(grid, pos, d) >= self.clearance * width
                if not ok and (not trace.trusted or trace.trusted[-1]):
                    record.warnings.append(
                        f"front ({side}, theta={th:g}) within clearance margin at t={state.t:.6g}")
                    record.trusted_until = min(record.trusted_until, state.t)
                trace.add(state.t, pos, ok and (not trace.trusted or trace.trusted[-1]))

    def on_start(self, state, record):
        self._next = state.t
        if self.due(state.t):
            self._sample(state, record)

    def on_step(self, prev, state, report, record):
        if self.due(state.t):
            self._sample(state, record)

    def on_finish(self, state, record):
        record.fronts[self.name] = self.traces


class ResidualMonitor(Observer):
    """Maximum of the w-supersolution residual over every ``stride``-th step pair."""

    def __init__(self, params: Params, stride: int = 1, name: str = "residual"):
        self.params = params
        self.stride = stride
        self.name = name
        self.count = 0
        self.max_residual = -math.inf
        self.max_flipped = -math.inf
        self.t_at_max = math.nan

    def on_step(self, prev, state, report: StepReport, record):
        self.count += 1
        if self.count % self.stride:
            return
        r = supersolution_residual(prev, state, self.params).values
        m = float(r.max())
        if m > self.max_residual:
            self.max_residual, self.t_at_max = m, state.t
        u_avg = 0.5 * (prev.u.values + state.u.values)
        p = self.params
        flipped = r + 2 * (p.b - p.dim * p.mu * p.chi / 4) * u_avg ** 2
        self.max_flipped = max(self.max_flipped, float(flipped.max()))

    def on_finish(self, state, record):
        record.monitors[self.name] = {
            "max_residual": self.max_residual,
            "max_flipped": self.max_flipped,
            "t_at_max": self.t_at_max,
            "pairs": self.count // self.stride,
        }


class EnvelopeMonitor(Observer):
    """Worst envelope violation over every step of the run."""

    def __init__(self, params: Params, k: float, big_m: float, d: float, directions,
                 t0: float = 0.0, name: str = "envelope"):
        self.params, self.k, self.big_m, self.d = params, k, big_m, d
        self.directions = directions
        self.t0 = t0
        self.name = name
        self.worst_w = 0.0
        self.worst_v = 0.0

    def _check(self, state):
        rep = envelope_check(state, self.params, self.k, self.big_m, self.d,
                             self.directions, self.t0)
        self.worst_w = max(self.worst_w, rep.max_violation_w)
        self.worst_v = max(self.worst_v, rep.max_violation_v)

    def on_start(self, state, record):
        self._check(state)

    def on_step(self, prev, state, report, record):
        self._check(state)

    def on_finish(self, state, record):
        record.monitors[self.name] = {"k": self.k, "M": self.big_m, "d": self.d,
                                      "max_violation_w": self.worst_w,
                                      "max_violation_v": self.worst_v}


class DichotomyMonitor(_Cadence):
    """Interior infimum and exterior suprema at fixed cadence."""

    def __init__(self, params: Params, eps: float, every: float, region: str = "ball",
                 xi=None, name: str = "dichotomy"):
        super().__init__(every)
        self.params, self.eps, self.region, self.xi = params, eps, region, xi
        self.name = name
        self.rows: list[dict] = []

    def _sample(self, state):
        ext = exterior_supremum(state, self.params, self.eps, self.xi, self.region)
        self.rows.append({
            "t": state.t,
            "interior_inf_u": interior_infimum(state, self.params, self.eps, self.xi, self.region),
            "interior_inf_v": interior_infimum(state, self.params, self.eps, self.xi, self.region, "v"),
            "exterior_sup_u": ext.u,
            "exterior_sup_v": ext.v,
            "in_window": ext.in_window,
        })

    def on_start(self, state, record):
        self._next = state.t
        if self.due(state.t):
            self._sample(state)

    def on_step(self, prev, state, report, record):
        if self.due(state.t):
            self._sample(state)

    def on_finish(self, state, record):
        record.monitors[self.name] = self.rows


class BallMonitor(_Cadence):
    """(t, sup, inf) of u over a fixed ball, for the persistence check."""

    def __init__(self, center, radius: float, every: float, name: str = "ball"):
        super().__init__(every)
        self.center, self.radius = center, radius
        self.name = name
        self.series: list[tuple[float, float, float]] = []
        self._mask = None

    def _sample(self, state):
        if self._mask is None:
            self._mask = ball_mask(state.grid, self.center, self.radius)
        u = state.u.values[self._mask]
        self.series.append((state.t, float(u.max()), float(u.min())))

    def on_start(self, state, record):
        self._next = state.t
        if self.due(state.t):
            self._sample(state)

    def on_step(self, prev, state, report, record):
        if self.due(state.t):
            self._sample(state)

    def on_finish(self, state, record):
        record.monitors[self.name] = {"center": list(np.atleast_1d(self.center).astype(float)),
                                      "radius": self.radius, "series": self.series}

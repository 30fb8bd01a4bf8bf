"""run / sweep / theory / verify implementations behind the CLI."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .. import analysis as an
from .. import theory
from ..core import Boundary, Grid, Params, RunRecord, SchemeFailure, State, damping_condition
from ..solver import Observer, SchemeConfig, SnapshotObserver, run
from . import io
from .config import ConfigError, RunConfig, set_path
from .initial import InitialDataSpec, Kind, build_initial

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- resolution

@dataclass
class Resolved:
    config: RunConfig
    params: Params
    grid: Grid
    scheme: SchemeConfig
    initial: State
    kind: Kind
    xi: np.ndarray

    @property
    def capacity(self) -> float:
        return self.params.a / self.params.b

    @property
    def region(self) -> str:
        if self.config.analysis.region:
            return self.config.analysis.region
        return {Kind.FRONT_LIKE: "halfspace", Kind.TWO_SIDED: "slab"}.get(self.kind, "ball")

    def front_direction(self):
        d = self.config.analysis.direction
        if d is not None:
            return d if isinstance(d, str) else (float(d) if np.ndim(d) == 0 else np.asarray(d, float))
        if self.grid.dim == 1:
            return float(self.xi[0])
        return "radial" if self.kind in (Kind.COMPACT_BUMP, Kind.CUSTOM) else self.xi

    def envelope_directions(self) -> list:
        if self.kind is Kind.FRONT_LIKE:
            return [self.xi]
        if self.kind is Kind.TWO_SIDED:
            return [self.xi, -self.xi]
        if self.grid.dim == 1:
            return [np.array([1.0]), np.array([-1.0])]
        angles = np.linspace(0, 2 * np.pi, 32, endpoint=False)
        if self.grid.dim == 2:
            return [np.array([math.cos(t), math.sin(t)]) for t in angles]
        return [v for v in np.vstack([np.eye(3), -np.eye(3)])]

    @property
    def two_sided(self) -> bool:
        return self.config.analysis.two_sided or self.kind is Kind.TWO_SIDED


def resolve(config: RunConfig, seed: int | None = None) -> Resolved:
    params = config.params.build()
    grid = config.grid.build()
    if grid.dim != params.dim:
        raise ConfigError(f"grid has {grid.dim} axes but params.dim = {params.dim}", "grid")
    scheme = config.scheme.build()
    init_spec = config.initial
    if seed is not None:
        init_spec = type(init_spec)(**{**asdict(init_spec), "seed": int(seed)})
    spec = InitialDataSpec.from_config(init_spec)
    state = build_initial(spec, grid)
    xi = spec.direction(grid.dim) if spec.kind is not Kind.CUSTOM else np.eye(grid.dim)[0]
    return Resolved(config, params, grid, scheme, state, spec.kind, xi)


def coarsen(grid: Grid, factor: int) -> Grid:
    if grid.boundary is Boundary.NEUMANN:
        n = tuple((m - 1) // factor + 1 for m in grid.n)
    else:
        n = tuple(m // factor for m in grid.n)
    return Grid(grid.lo, grid.hi, n, grid.boundary)


# ------------------------------------------------------------------ runs

class SnapshotWriter(Observer):
    """Writes (state, next state) pairs so offline checks see true step pairs."""

    def __init__(self, directory: Path, every: float):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.every = every
        self._next = 0.0
        self._pending: State | None = None
        self.files: list[str] = []
        self._step = 0

    def next_time(self, t):
        return self._next

    def _write(self, state, nxt):
        name = f"snap_{len(self.files):05d}.bin"
        io.write_snapshot(self.dir / name, state, nxt, self._step)
        self.files.append(name)

    def on_start(self, state, record):
        self._next = state.t + self.every
        self._pending = state

    def on_step(self, prev, state, report, record):
        self._step += 1
        if self._pending is not None:
            self._write(self._pending, state)
            self._pending = None
        if state.t >= self._next - 1e-9 * self.every:
            self._pending = state
            self._next = state.t + self.every

    def on_finish(self, state, record):
        if self._pending is not None:
            self._write(self._pending, None)
            self._pending = None
        record.monitors["snapshot_files"] = self.files


def persistence_setup(res: Resolved) -> tuple[float, np.ndarray, float]:
    """(η, ball centre, ball radius 2L(η)); M defaults to max(a/b, sup u₀)."""
    cfg = res.config.analysis
    eta = cfg.eta_fraction * res.capacity
    big_m = cfg.big_m or max(res.capacity, res.initial.u.max())
    center = np.zeros(res.grid.dim)
    if res.kind is Kind.COMPACT_BUMP and res.config.initial.center is not None:
        center = np.asarray(res.config.initial.center, float)
    if cfg.ball_radius is not None:
        return eta, center, float(cfg.ball_radius)
    eps = cfg.eps[0]
    T = theory.persistence_time(eta, big_m, res.params.lam)
    ell = theory.cell_halfwidth(eps, res.params.a, res.params.dim)
    L = theory.persistence_radius(eta, T, res.params.a, res.params.dim, ell)
    return eta, center, 2 * L


@dataclass
class Monitors:
    fronts: an.FrontTracker
    residual: an.ResidualMonitor
    dichotomy: an.DichotomyMonitor
    ball: an.BallMonitor
    envelope: an.EnvelopeMonitor | None


def build_monitors(res: Resolved) -> Monitors:
    cfg, obs = res.config.analysis, res.config.observers
    thresholds = sorted({*(f * res.capacity for f in cfg.thresholds), cfg.threshold * res.capacity})
    fronts = an.FrontTracker(thresholds, res.front_direction(), obs.front_every,
                             two_sided=res.two_sided, clearance=obs.clearance)
    residual = an.ResidualMonitor(res.params, obs.residual_stride)
    xi = None if res.region == "ball" else res.xi
    dichotomy = an.DichotomyMonitor(res.params, cfg.eps[0], obs.dichotomy_every, res.region, xi)
    _, center, radius = persistence_setup(res)
    ball = an.BallMonitor(center, radius, obs.ball_every)
    envelope = None
    if cfg.envelope_k:
        dirs = res.envelope_directions()
        big_m, d = an.envelope_constants(res.initial, res.params, cfg.envelope_k, dirs)
        envelope = an.EnvelopeMonitor(res.params, cfg.envelope_k, big_m, d, dirs, res.initial.t)
    return Monitors(fronts, residual, dichotomy, ball, envelope)


@dataclass
class RunResult:
    resolved: Resolved
    record: RunRecord
    monitors: Monitors
    tau: float | None
    calibration: an.TauCalibration | None
    summary: dict
    report: dict


def _residual_only(res: Resolved, factor: int) -> tuple[float, float, float]:
    grid = coarsen(res.grid, factor)
    scheme = SchemeConfig(**{**res.scheme.__dict__, "dt": res.scheme.dt * factor})
    state = build_initial(InitialDataSpec.from_config(res.config.initial), grid)
    mon = an.ResidualMonitor(res.params, res.config.observers.residual_stride)
    run(state, res.params, scheme, res.config.horizon, [mon])
    return min(grid.dx), scheme.dt, mon.max_residual


def calibrate(res: Resolved, finest_max: float, factors=(4, 2)) -> an.TauCalibration:
    """Residual maxima on the run grid and two coarsenings, fitted as C(dx² + dt)."""
    levels = [_residual_only(res, f) for f in factors]
    levels.append((min(res.grid.dx), res.scheme.dt, finest_max))
    return an.calibrate_tau(levels, scale=res.capacity)


def fits_for(traces: dict, window: float) -> dict[str, dict]:
    out = {}
    for (th, side), trace in sorted(traces.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        label = f"{side}@{th:g}"
        part = trace.trusted_part()
        try:
            out[label] = asdict(an.fit_speed(part, window))
        except an.InsufficientSamples as exc:
            out[label] = {"error": str(exc)}
    return out


def _clause(ok, value, limit, text) -> dict:
    return {"pass": None if ok is None else bool(ok), "value": value, "limit": limit, "clause": text}


def evaluate(res: Resolved, fits: dict, dichotomy_rows: list, residual_max: float | None,
             envelope: dict | None, ball_series: list, min_values: tuple[float, float],
             tau: float | None, horizon: float) -> dict:
    """Pass/fail per theorem clause; shared by the online run and offline verify."""
    cfg = res.config.analysis
    p = res.params
    c_star = theory.kpp_speed(p.a)
    clauses: dict[str, dict] = {}
    predicted = damping_condition(p)

    th = cfg.threshold * res.capacity
    sides = ["back", "fwd"] if res.two_sided else ["fwd"]
    speeds = {}
    for side in sides:
        fit = fits.get(f"{side}@{th:g}", {"error": "no trace"})
        if "error" in fit:
            clauses[f"speed_{side}"] = _clause(False, None, cfg.speed_tol, fit["error"])
            continue
        rel = abs(fit["speed"] / c_star - 1)
        speeds[side] = fit["speed"]
        clauses[f"speed_{side}"] = _clause(
            rel <= cfg.speed_tol if predicted else None, fit["speed"], cfg.speed_tol,
            f"fitted speed within {cfg.speed_tol:.0%} of 2*sqrt(a) = {c_star:g}")
    if len(speeds) == 2:
        spread = abs(speeds["back"] - speeds["fwd"]) / (0.5 * (speeds["back"] + speeds["fwd"]))
        clauses["two_sided_symmetry"] = _clause(spread <= 0.02, spread, 0.02,
                                                "left and right speeds agree")

    late = [r for r in dichotomy_rows if r["t"] >= horizon / 2 - 1e-9]
    if late:
        inf_uv = min(min(r["interior_inf_u"], r.get("interior_inf_v", math.inf)) for r in late)
        clauses["interior_lower_bound"] = _clause(
            inf_uv > cfg.floor, inf_uv, cfg.floor,
            "interior infimum over (2sqrt(a)-eps)t region stays above floor on the second half")
        last = dichotomy_rows[-1]
        ext = max(last["exterior_sup_u"], last["exterior_sup_v"])
        ok = ext < cfg.floor if last["in_window"] else None
        clauses["exterior_decay"] = _clause(
            ok, ext, cfg.floor, "sup of u and v over (2sqrt(a)+eps)t exterior below floor at the end")

    if residual_max is not None:
        ok = None if tau is None or not predicted else residual_max <= tau
        clauses["supersolution"] = _clause(ok, residual_max, tau, "w_t <= Laplacian(w) + a w up to tau")
    if envelope is not None:
        worst = max(envelope["max_violation_w"], envelope["max_violation_v"])
        ok = None if tau is None or not predicted else worst <= tau
        clauses["envelope"] = _clause(ok, worst, tau, "w and v below exponential envelopes up to tau")
    if ball_series:
        eta = cfg.eta_fraction * res.capacity
        rep = an.persistence_check(ball_series, eta, cfg.burn_in)
        if rep.triggered:
            ok = rep.delta > cfg.floor and rep.never_below_half
            clauses["persistence"] = _clause(ok, rep.delta, cfg.floor,
                                             "ball infimum after trigger stays positive")
        else:
            clauses["persistence"] = _clause(None, None, cfg.floor, "eta never reached")
    clauses["nonnegativity"] = _clause(min(min_values) >= 0, min(min_values), 0.0, "u, v >= 0")
    decided = [c["pass"] for c in clauses.values() if c["pass"] is not None]
    return {"damping_condition": predicted, "clauses": clauses, "verdict": all(decided)}


def execute(config: RunConfig, out: Path | None = None, seed: int | None = None,
            tau: float | None | str = "config") -> RunResult:
    """Run one configuration, evaluate every monitor and optionally write artifacts."""
    res = resolve(config, seed)
    mons = build_monitors(res)
    observers: list[Observer] = [mons.fronts, mons.residual, mons.dichotomy, mons.ball]
    if mons.envelope is not None:
        observers.append(mons.envelope)
    observers.insert(0, SnapshotObserver(config.observers.snapshot_every))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        if config.output.snapshots:
            observers.append(SnapshotWriter(out / "snapshots", config.observers.snapshot_every))
    record = run(res.initial, res.params, res.scheme, config.horizon, observers)

    tau_setting = config.analysis.tau_disc if tau == "config" else tau
    calibration = None
    if tau_setting == "auto":
        calibration = calibrate(res, mons.residual.max_residual)
        tau_value = calibration.tau(min(res.grid.dx), res.scheme.dt)
    elif tau_setting is None:
        tau_value = None
    else:
        tau_value = float(tau_setting)

    fits = fits_for(mons.fronts.traces, config.analysis.window_fraction)
    mins = (min(s.stats["min_u"] for s in record.snapshots), min(s.stats["min_v"] for s in record.snapshots))
    residual = record.monitors.get("residual", {}).get("max_residual")
    if residual is not None and not math.isfinite(residual):
        residual = None
    report = evaluate(res, fits, mons.dichotomy.rows, residual, record.monitors.get("envelope"),
                      mons.ball.series, mins, tau_value, config.horizon)
    eta, center, radius = persistence_setup(res)
    summary = {
        "config": config.to_dict(),
        "params": res.params.to_dict(),
        "grid": res.grid.to_dict(),
        "scheme": res.scheme.to_dict(),
        "termination": record.termination,
        "steps": record.steps,
        "warnings": record.warnings,
        "trusted_until": record.trusted_until if math.isfinite(record.trusted_until) else None,
        "snapshots": [{"t": s.t, **s.stats} for s in record.snapshots],
        "fits": fits,
        "monitors": {k: v for k, v in record.monitors.items() if k not in ("fronts",)},
        "tau_disc": tau_value,
        "tau_calibration": None if calibration is None else {
            "constant": calibration.constant, "levels": calibration.levels, "floor": calibration.floor},
        "persistence": {"eta": eta, "center": center, "radius": radius},
        "kpp_speed": theory.kpp_speed(res.params.a),
        "damping_condition": damping_condition(res.params),
    }
    if out is not None:
        io.write_json(out / "summary.json", summary)
        io.write_csv(out / "fronts.csv", io.FRONT_COLUMNS, front_rows(mons.fronts.traces))
        io.write_json(out / "report.json", report)
    return RunResult(res, record, mons, tau_value, calibration, summary, report)


def mons_directions(res: Resolved) -> list:
    tracker = an.FrontTracker([], res.front_direction(), two_sided=res.two_sided)
    return tracker.directions(res.grid)


def front_rows(traces: dict) -> list[dict]:
    rows = []
    for (th, side), trace in sorted(traces.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        for t, x, ok in zip(trace.times, trace.positions, trace.trusted):
            rows.append({"t": t, "threshold": th, "direction": trace.label, "position": x, "trusted": ok})
    return rows


def cmd_run(config: RunConfig, out: Path, seed: int | None = None) -> int:
    try:
        result = execute(config, out, seed)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except SchemeFailure as exc:
        log.error("numerical failure: %s", exc)
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "failure.json", {"error": str(exc), "t": exc.t})
        return EXIT_NUMERIC
    verdict = result.report["verdict"]
    log.info("run finished: %s, verdict %s", result.record.termination, "pass" if verdict else "fail")
    return EXIT_OK


# ----------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ["index", "chi", "a", "b", "lam", "mu", "dim", "damping_condition", "speed",
                 "speed_rel_err", "max_residual", "max_flipped", "tau", "pass", "error"]


def _sweep_point(payload: tuple[int, dict, dict]) -> dict:
    index, data, point = payload
    row: dict[str, Any] = {"index": index, **{k: v for k, v in point.items()}}
    try:
        cfg = RunConfig.from_dict(data)
        result = execute(cfg, None)
    except (ConfigError, SchemeFailure) as exc:
        row.update({"error": str(exc), "pass": False})
        return row
    p = result.resolved.params
    th = cfg.analysis.threshold * result.resolved.capacity
    fit = result.summary["fits"].get(f"fwd@{th:g}", {})
    c_star = theory.kpp_speed(p.a)
    speed = fit.get("speed")
    row.update({
        **p.to_dict(),
        "damping_condition": damping_condition(p),
        "speed": speed,
        "speed_rel_err": None if speed is None else speed / c_star - 1,
        "max_residual": result.monitors.residual.max_residual,
        "max_flipped": result.monitors.residual.max_flipped,
        "tau": result.tau,
        "error": fit.get("error"),
    })
    checks = []
    if damping_condition(p):
        checks.append(speed is not None and abs(speed / c_star - 1) <= cfg.analysis.speed_tol)
        if result.tau is not None:
            checks.append(result.monitors.residual.max_residual <= result.tau)
    row["pass"] = all(checks) if checks else None
    return row


def sweep_points(spec: dict) -> list[tuple[int, dict, dict]]:
    unknown = set(spec) - {"template", "axes"}
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", "sweep")
    if "template" not in spec or "axes" not in spec:
        raise ConfigError("sweep needs 'template' and 'axes'", "sweep")
    template = RunConfig.from_dict(spec["template"]).to_dict()
    axes = list(spec["axes"].items())
    points = []
    for index, values in enumerate(itertools.product(*(v for _, v in axes))):
        data = RunConfig.from_dict(template).to_dict()
        point = {}
        for (key, _), value in zip(axes, values):
            set_path(data, key, value)
            point[key] = value
        data["output"]["snapshots"] = False
        points.append((index, data, point))
    return points


def cmd_sweep(spec: dict, out: Path, jobs: int = 1) -> tuple[int, list[dict]]:
    try:
        points = sweep_points(spec)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG, []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, points))
    else:
        rows = [_sweep_point(p) for p in points]
    axis_cols = [k for k in spec["axes"] if k not in SWEEP_COLUMNS]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "sweep.csv", ["index", *axis_cols, *SWEEP_COLUMNS[1:]], rows)
    return EXIT_OK, rows


# ----------------------------------------------------------------- theory

def eigen_orders(c: float, eps: float, a: float, dim: int, seed: int = 0,
                 divisions=(100, 200, 400), n_points: int = 64) -> dict:
    """Observed convergence order of the central-difference eigen-residual."""
    ell = theory.cell_halfwidth(eps, a, dim)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.9 * ell, 0.9 * ell, size=(n_points, dim))
    errs = [float(theory.eigen_residual(c, eps, a, dim, ell / m, pts).max()) for m in divisions]
    orders = [math.log(errs[i] / errs[i + 1], divisions[i + 1] / divisions[i]) for i in range(len(errs) - 1)]
    return {"c": c, "dim": dim, "h": [ell / m for m in divisions], "residual": errs, "orders": orders}


def cmd_theory(params: Params, eps: float, eta: float | None = None,
               big_m: float | None = None) -> dict:
    bundle = theory.build_bundle(params, eps, big_m)
    out = bundle.to_dict(etas=[eta] if (eta is not None and big_m is not None) else [])
    cmax = 2 * math.sqrt(params.a) - eps
    out["eigen_self_test"] = [eigen_orders(c, eps, params.a, params.dim) for c in (-cmax, 0.0, cmax)]
    out["minimal_abar_endpoint"] = {
        "lambda": bundle.eigenvalue(cmax),
        "floor": bundle.lambda_floor,
    }
    return out


# ----------------------------------------------------------------- verify

def cmd_verify(run_dir: Path) -> dict:
    """Recompute every clause from the artifacts on disk alone."""
    run_dir = Path(run_dir)
    try:
        summary = io.read_json(run_dir / "summary.json")
    except (OSError, ValueError) as exc:
        raise io.SnapshotError(f"cannot read summary: {exc}") from exc
    config = RunConfig.from_dict(summary["config"])
    res = resolve(config)
    files = summary["monitors"].get("snapshot_files")
    if not files:
        raise io.SnapshotError("run has no snapshots")
    snaps = [io.read_snapshot(run_dir / "snapshots" / f) for f in files]
    p = res.params
    tau = summary.get("tau_disc")
    cfg = config.analysis

    residual = -math.inf
    mins = [math.inf, math.inf]
    for snap in snaps:
        for st in (snap.state, snap.next_state):
            if st is None:
                continue
            mins[0] = min(mins[0], st.u.min())
            mins[1] = min(mins[1], st.v.min())
        if snap.next_state is not None:
            r = an.supersolution_residual(snap.state, snap.next_state, p).values
            residual = max(residual, float(r.max()))

    envelope = None
    if cfg.envelope_k:
        dirs = res.envelope_directions()
        first = snaps[0].state
        big_m, d = an.envelope_constants(first, p, cfg.envelope_k, dirs)
        worst_w = worst_v = 0.0
        for snap in snaps:
            for st in (snap.state, snap.next_state):
                if st is None:
                    continue
                try:
                    rep = an.envelope_check(st, p, cfg.envelope_k, big_m, d, dirs, first.t)
                except an.EnvelopePreconditionError:
                    worst_w = math.inf
                    continue
                worst_w = max(worst_w, rep.max_violation_w)
                worst_v = max(worst_v, rep.max_violation_v)
        envelope = {"max_violation_w": worst_w, "max_violation_v": worst_v}

    xi = None if res.region == "ball" else res.xi
    rows = []
    for snap in snaps:
        st = snap.state
        ext = an.exterior_supremum(st, p, cfg.eps[0], xi, res.region)
        rows.append({"t": st.t, "interior_inf_u": an.interior_infimum(st, p, cfg.eps[0], xi, res.region),
                     "interior_inf_v": an.interior_infimum(st, p, cfg.eps[0], xi, res.region, "v"),
                     "exterior_sup_u": ext.u, "exterior_sup_v": ext.v, "in_window": ext.in_window})

    pers = summary["persistence"]
    ball = an.persistence_series([s.state for s in snaps], pers["center"], pers["radius"])

    sides = {an.direction_label(d): side for side, d in mons_directions(res)}
    traces: dict = {}
    for row in io.read_csv(run_dir / "fronts.csv"):
        th = float(row["threshold"])
        key = (th, sides.get(row["direction"], "fwd"))
        tr = traces.setdefault(key, an.FrontTrace(th, row["direction"]))
        tr.add(float(row["t"]), float(row["position"]), row["trusted"] == "true")
    fits = fits_for(traces, cfg.window_fraction)

    report = evaluate(res, fits, rows, residual if math.isfinite(residual) else None, envelope,
                      ball, (mins[0], mins[1]), tau, config.horizon)
    report["snapshots"] = len(snaps)
    io.write_json(run_dir / "verify.json", report)
    return report

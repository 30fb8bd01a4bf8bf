import math

import numpy as np
import pytest

from chemospread import analysis as an
from chemospread.core import Boundary, Field, Grid, Params, State
from chemospread.solver import SchemeConfig, run, step

P = Params(chi=0.5, a=1.0, b=1.0, lam=1.0, mu=1.0)
CN = SchemeConfig(dt=0.01, diffusion="crank_nicolson")


def bump_state(grid, R=5.0, amp=1.0, t=0.0):
    r = grid.radius()
    u = amp * np.maximum(0, 1 - (r / R) ** 2) ** 2
    return State.from_arrays(grid, u, 0.5 * u, t)


# ------------------------------------------------------------------ fronts

def test_step_profile_crossing_is_zero():
    g = Grid((-10.0,), (10.0,), (20,))      # even n: nodes at ±dx/2, none at 0
    x = g.axis(0)
    f = Field(g, np.where(x < 0, 1.0, 0.0))
    assert an.front_position(f, 0.5) == pytest.approx(0.0, abs=1e-12)
    # looking along −x the set {u ≥ θ} reaches the wall
    assert an.front_position(f, 0.5, -1) == pytest.approx(10.0)


def test_front_position_linear_interpolation():
    g = Grid((0.0,), (7.0,), (8,))
    f = Field(g, np.array([1.0, 1.0, 0.8, 0.4, 0.0, 0.0, 0.0, 0.0]))
    assert an.front_position(f, 0.5) == pytest.approx(2.75)
    assert an.front_position(f, 0.9) == pytest.approx(1.5)


def test_front_position_translation_equivariance():
    g = Grid((-20.0,), (20.0,), (401,))
    x = g.axis(0)
    base = np.exp(-x ** 2 / 8)
    p0 = an.front_position(Field(g, base), 0.3)
    for k in (1, 7, 40):
        shifted = np.concatenate([np.zeros(k), base[:-k]])
        assert an.front_position(Field(g, shifted), 0.3) == pytest.approx(p0 + k * g.dx[0], abs=1e-12)


def test_front_position_directions():
    g = Grid((-10.0,), (10.0,), (201,))
    x = g.axis(0)
    f = Field(g, np.where(np.abs(x - 2) <= 3, 1.0, 0.0))
    assert an.front_position(f, 0.5, 1) == pytest.approx(5.05, abs=1e-12)
    assert an.front_position(f, 0.5, -1) == pytest.approx(1.05, abs=1e-12)
    back, fwd = an.front_positions_two_sided(f, 0.5)
    assert (back, fwd) == pytest.approx((1.05, 5.05))


def test_front_position_radial_2d():
    g = Grid.uniform(2, 10.0, 201)
    f = Field(g, np.maximum(0, 1 - g.radius() / 6))
    assert an.front_position(f, 0.5, "radial") == pytest.approx(3.0, abs=0.05)
    assert an.front_position(f, 0.5, [1.0, 0.0]) == pytest.approx(3.0, abs=1e-9)
    diag = np.array([1.0, 1.0]) / math.sqrt(2)
    assert an.front_position(f, 0.5, diag) == pytest.approx(3.0, abs=0.1)


def test_no_front():
    g = Grid((0.0,), (1.0,), (11,))
    with pytest.raises(an.NoFront):
        an.front_position(Field(g, np.full(11, 0.2)), 0.5)


def test_wall_distance_and_labels():
    g = Grid((-10.0,), (30.0,), (41,))
    assert an.wall_distance(g, 5.0, 1) == 25.0
    assert an.wall_distance(g, 5.0, -1) == 5.0
    assert an.direction_label(1.0) == "+1" and an.direction_label(-1) == "-1"
    assert an.direction_label("radial") == "radial"
    assert an.direction_label([0.0, 1.0]) == "(0.0 1.0)"


def test_trace_rejects_bad_samples():
    tr = an.FrontTrace(0.5, 1)
    tr.add(0.0, 1.0)
    with pytest.raises(ValueError):
        tr.add(0.0, 2.0)
    with pytest.raises(ValueError):
        tr.add(1.0, math.nan)


def test_trusted_part_stops_at_first_untrusted():
    tr = an.FrontTrace(0.5, 1)
    for t, ok in [(0, True), (1, True), (2, False), (3, True)]:
        tr.add(t, t, ok)
    assert tr.trusted_part().times == [0.0, 1.0]


# ---------------------------------------------------------------- fitting

def _trace(times, positions):
    tr = an.FrontTrace(0.5, 1)
    for t, x in zip(times, positions):
        tr.add(t, x)
    return tr


def test_fit_exact_line():
    t = np.linspace(0, 10, 21)
    fit = an.fit_speed(_trace(t, 2 * t + 1))
    assert fit.speed == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(1.0, abs=1e-10)
    assert fit.residual_rms < 1e-12
    assert (fit.t_start, fit.t_end, fit.samples) == (5.0, 10.0, 11)


def test_fit_constant_positions():
    t = np.linspace(0, 10, 21)
    assert an.fit_speed(_trace(t, np.full(21, 3.0))).speed == pytest.approx(0.0, abs=1e-12)


def test_fit_quantized_positions():
    dx = 0.1
    t = np.linspace(0, 100, 201)
    x = np.floor(1.97 * t / dx) * dx + dx / 2      # error within ±dx/2
    fit = an.fit_speed(_trace(t, x))
    assert abs(fit.speed - 1.97) <= 2 * dx / 50


def test_fit_needs_five_samples():
    with pytest.raises(an.InsufficientSamples):
        an.fit_speed(_trace([0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5]))
    with pytest.raises(an.InsufficientSamples):
        an.fit_speed(_trace([0], [0]))


# -------------------------------------------------------- interior/exterior

def test_interior_infimum_small_t_uses_origin():
    g = Grid((-10.0,), (10.0,), (201,))
    s = bump_state(g, t=0.0)
    assert an.interior_infimum(s, P, 0.5) == 1.0
    s.u.values[100] = 0.7
    assert an.interior_infimum(s, P, 0.5) == 0.7


def test_interior_infimum_steady_and_regions():
    g = Grid((-10.0,), (10.0,), (201,))
    s = State.from_arrays(g, np.full(201, 1.0), np.full(201, 1.0), t=2.0)
    assert an.interior_infimum(s, P, 0.5) == 1.0
    x = g.axis(0)
    s.u.values[:] = np.where(x < -3.5, 0.0, 1.0)
    # ball |x| ≤ 3 is inside the plateau, halfspace x ≤ 3 is not
    assert an.interior_infimum(s, P, 0.5, region="ball") == 1.0
    assert an.interior_infimum(s, P, 0.5, xi=[1.0], region="halfspace") == 0.0
    assert an.interior_infimum(s, P, 0.5, xi=[1.0], region="slab") == 1.0
    assert an.interior_infimum(s, P, 0.5, component="v") == 1.0
    with pytest.raises(ValueError):
        an.interior_infimum(s, P, 0.5, region="cube")


def test_exterior_supremum():
    g = Grid((-50.0,), (50.0,), (1001,))
    s = bump_state(g, R=5.0, t=3.0)        # region |x| ≥ 7.5 lies beyond the support
    ext = an.exterior_supremum(s, P, 0.5)
    assert (ext.u, ext.v, ext.in_window) == (0.0, 0.0, True)
    late = bump_state(g, t=30.0)
    assert not an.exterior_supremum(late, P, 0.5).in_window


# ------------------------------------------------------ supersolution checks

def test_w_functional():
    g = Grid((0.0,), (1.0,), (11,))
    x = g.axis(0)
    u = np.linspace(0.1, 0.9, 11)
    s = State.from_arrays(g, u, np.full(11, 3.0))
    assert np.array_equal(an.w_functional(s, P).values, u)
    lin = State.from_arrays(g, np.zeros(11), x)
    w = an.w_functional(lin, P).values
    assert np.allclose(w[1:-1], P.chi / (2 * P.mu))
    rng = np.random.default_rng(0)
    rnd = State.from_arrays(g, rng.random(11), rng.random(11))
    assert np.all(an.w_functional(rnd, P).values >= rnd.u.values)


def test_residual_at_steady_state():
    g = Grid((-5.0,), (5.0,), (51,))
    p = Params(chi=0.5, a=2.0, b=4.0, lam=6.0, mu=3.0)
    s0 = State.from_arrays(g, np.full(51, 0.5), np.full(51, 0.25))
    s1 = State.from_arrays(g, np.full(51, 0.5), np.full(51, 0.25), t=0.1)
    r = an.supersolution_residual(s0, s1, p).values
    assert np.allclose(r, -p.a * p.a / p.b, rtol=1e-14)
    flipped = an.supersolution_residual(s0, s1, p, flip_damping=True).values
    assert np.allclose(flipped, -1.0 + 2 * (4.0 - 0.375) * 0.25)
    with pytest.raises(ValueError):
        an.supersolution_residual(s1, s0, p)


def test_residual_nonpositive_on_fisher_step():
    g = Grid((-20.0,), (20.0,), (401,))
    q = P.with_(chi=0.0)
    s0 = bump_state(g, R=5.0)
    s0 = run(s0, q, CN, 1.0).final                  # smooth out the initial profile
    s1, _ = step(s0, q, SchemeConfig(dt=1e-3, dt_policy="fixed", diffusion="crank_nicolson"))
    r = an.supersolution_residual(s0, s1, q).values
    assert r.max() <= 1e-6
    assert an.supersolution_residual(s0, s1, q, flip_damping=True).values.max() > 0.1


def test_calibrate_tau():
    levels = [(0.4, 0.04, 3 * 0.2), (0.2, 0.02, 3 * 0.06), (0.1, 0.01, 3 * 0.02)]
    cal = an.calibrate_tau(levels, scale=2.0)
    assert cal.constant == pytest.approx(3.0)
    assert cal.tau(0.1, 0.01) == pytest.approx(9 * 0.02)
    assert cal.floor == 2e-12
    zero = an.calibrate_tau([(0.2, 0.1, -1.0), (0.1, 0.05, 0.0)])
    assert zero.constant == 0.0 and zero.tau(0.1, 0.05) == an.TAU_FLOOR
    with pytest.raises(an.InsufficientSamples):
        an.calibrate_tau([(0.1, 0.1, 0.0)])


def test_envelope_constants_minimal():
    g = Grid((-20.0,), (20.0,), (401,))
    s = bump_state(g)
    dirs = [np.array([1.0]), np.array([-1.0])]
    big_m, d = an.envelope_constants(s, P, 0.5, dirs)
    rep = an.envelope_check(s, P, 0.5, big_m, d, dirs)
    assert rep.max_violation == 0.0
    assert d >= P.mu * big_m / (P.a + P.lam)
    with pytest.raises(an.EnvelopePreconditionError):
        an.envelope_check(s, P, 0.5, 0.9 * big_m, d, dirs)


def test_envelope_holds_on_fisher_run():
    g = Grid((-40.0,), (40.0,), (801,))
    q = P.with_(chi=0.0)
    s = bump_state(g, R=5.0)
    k = 0.5
    dirs = [np.array([1.0]), np.array([-1.0])]
    big_m, d = an.envelope_constants(s, q, k, dirs)
    mon = an.EnvelopeMonitor(q, k, big_m, d, dirs)
    rec = run(s, q, CN, 5.0, [mon])
    assert rec.monitors["envelope"]["max_violation_w"] <= 1e-12
    assert rec.monitors["envelope"]["max_violation_v"] <= 1e-12


def test_one_sided_envelope_is_looser_than_two_sided():
    g = Grid((-20.0,), (20.0,), (401,))
    one = an._envelope(g, [np.array([1.0])], 0.5, 2.5, 0.0)
    two = an._envelope(g, [np.array([1.0]), np.array([-1.0])], 0.5, 2.5, 0.0)
    assert np.all(two <= one)
    assert two[0] == pytest.approx(math.exp(-10.0))


# ------------------------------------------------------------ Duhamel oracle

@pytest.mark.parametrize("boundary, n", [(Boundary.PERIODIC, 256), (Boundary.NEUMANN, 257)])
def test_duhamel_free_decay(boundary, n):
    g = Grid((-30.0,), (30.0,), (n,), boundary)
    x = g.axis(0)
    s0 = 1.0
    v0 = Field(g, np.exp(-x ** 2 / s0))
    times = np.linspace(0, 2.0, 5)
    zeros = [np.zeros(n)] * 5
    p = Params(chi=0.0, a=1.0, b=1.0, lam=0.7, mu=1.0)
    v = an.duhamel_v_oracle(times, zeros, v0, p).values
    exact = math.exp(-0.7 * 2.0) * math.sqrt(s0 / (s0 + 8.0)) * np.exp(-x ** 2 / (s0 + 8.0))
    assert np.abs(v - exact).max() < 1e-10


def test_duhamel_uniform_source_closed_form():
    g = Grid((-5.0,), (5.0,), (32,), Boundary.PERIODIC)
    p = Params(chi=0.0, a=1.0, b=1.0, lam=2.0, mu=3.0)
    t = 1.5
    times = np.linspace(0, t, 301)
    u = [np.full(32, 0.8)] * times.size
    v = an.duhamel_v_oracle(times, u, g.zeros(), p).values
    exact = p.mu * 0.8 / p.lam * (1 - math.exp(-p.lam * t))
    assert np.abs(v - exact).max() < 1e-4


def test_duhamel_input_checks():
    g = Grid((-5.0,), (5.0,), (32,), Boundary.PERIODIC)
    u = [np.zeros(32)] * 3
    with pytest.raises(an.InsufficientSamples):
        an.duhamel_v_oracle([0.0, 1.0], u[:2], g.zeros(), P)
    with pytest.raises(an.InsufficientSamples):
        an.duhamel_v_oracle([0.1, 0.5, 1.0], u, g.zeros(), P)
    with pytest.raises(ValueError):
        an.duhamel_v_oracle([0.0, 1.0, 0.5], u, g.zeros(), P)


def test_heat_semigroup_preserves_mass_neumann():
    g = Grid((-10.0,), (10.0,), (101,))
    rng = np.random.default_rng(4)
    w = rng.random(101)
    q = g.quadrature_weights()
    out = an._heat_semigroup(w, g, 0.7)
    assert float((q * out).sum()) == pytest.approx(float((q * w).sum()), rel=1e-12)


# ------------------------------------------------------------- persistence

def test_persistence_steady_series():
    series = [(t, 1.0, 1.0) for t in np.arange(0, 20, 0.5)]
    rep = an.persistence_check(series, 0.1)
    assert rep.triggered and rep.t_trigger == 0.0 and rep.delta == 1.0 and rep.never_below_half


def test_persistence_trigger_and_dip():
    series = [(0.0, 0.05, 0.0), (1.0, 0.2, 0.0), (2.0, 0.5, 0.3), (8.0, 0.9, 0.6), (9.0, 0.9, 0.1)]
    rep = an.persistence_check(series, 0.1, burn_in=5.0)
    assert rep.t_trigger == 1.0 and rep.delta == 0.0
    rep = an.persistence_check(series[2:], 0.1, burn_in=5.0)
    assert rep.delta == 0.1 and rep.never_below_half
    assert [m for _, m in rep.running_min] == [0.3, 0.3, 0.1]
    assert not an.persistence_check([(0.0, 0.01, 0.0)], 0.1).triggered


def test_persistence_series_and_ball_monitor_agree():
    g = Grid((-20.0,), (20.0,), (401,))
    s = bump_state(g, R=8.0)
    mon = an.BallMonitor([0.0], 3.0, 0.5)
    rec = run(s, P, CN, 2.0, [mon])
    series = rec.monitors["ball"]["series"]
    assert [t for t, *_ in series] == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    direct = an.persistence_series([s], [0.0], 3.0)[0]
    assert series[0] == direct


# --------------------------------------------------------------- observers

def test_front_tracker_flags_clearance():
    g = Grid((-20.0,), (20.0,), (401,))
    s = bump_state(g, R=10.0)
    tracker = an.FrontTracker([0.5], 1, every=0.5, clearance=0.1)
    rec = run(s, P.with_(chi=0.0), CN, 8.0, [tracker])
    trace = rec.fronts["fronts"][(0.5, "fwd")]
    assert trace.trusted[0] and not trace.trusted[-1]
    assert rec.warnings and rec.trusted_until < 8.0
    first_bad = trace.trusted.index(False)
    assert an.wall_distance(g, trace.positions[first_bad], 1) < 4.0
    assert all(not ok for ok in trace.trusted[first_bad:])


def test_two_sided_tracker_symmetric():
    g = Grid((-30.0,), (30.0,), (601,))
    tracker = an.FrontTracker([0.5], 1, every=0.5, two_sided=True)
    run(bump_state(g), P, CN, 3.0, [tracker])
    back = tracker.traces[(0.5, "back")].positions
    fwd = tracker.traces[(0.5, "fwd")].positions
    assert np.allclose(back, fwd, atol=1e-9)


def test_residual_and_dichotomy_monitors():
    g = Grid((-30.0,), (30.0,), (601,))
    res = an.ResidualMonitor(P)
    dich = an.DichotomyMonitor(P, 0.5, 1.0)
    rec = run(bump_state(g, R=5.0), P, CN, 3.0, [res, dich])
    m = rec.monitors["residual"]
    assert m["pairs"] == rec.steps and m["max_flipped"] > m["max_residual"]
    rows = rec.monitors["dichotomy"]
    assert [r["t"] for r in rows] == pytest.approx([0.0, 1.0, 2.0, 3.0])
    assert set(rows[0]) == {"t", "interior_inf_u", "interior_inf_v", "exterior_sup_u",
                            "exterior_sup_v", "in_window"}

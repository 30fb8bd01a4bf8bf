import math

import numpy as np
import pytest

from chemospread.core import (
    Boundary,
    Field,
    Grid,
    GridMismatch,
    Params,
    RunRecord,
    SchemeFailure,
    State,
    UnstableStep,
    damping_condition,
    enforce_nonnegative,
    steady_state,
)


def P(**kw):
    base = dict(chi=0.0, a=1.0, b=1.0, lam=1.0, mu=1.0, dim=1)
    base.update(kw)
    return Params(**base)


@pytest.mark.parametrize("kw, expected", [
    (dict(dim=2, mu=1.0, chi=1.0, b=0.6), True),     # Nμχ/4 = 0.5
    (dict(dim=1, mu=1.0, chi=0.0, b=0.1), True),
    (dict(dim=3, mu=2.0, chi=2.0, b=3.0), False),    # equality is not enough
])
def test_damping_condition(kw, expected):
    assert damping_condition(P(**kw)) is expected


@pytest.mark.parametrize("kw, expected", [
    (dict(a=1.0, b=2.0, mu=1.0, lam=1.0), (0.5, 0.5)),
    (dict(a=1.0, b=1.0, mu=1.0, lam=1.0), (1.0, 1.0)),
    (dict(a=2.0, b=4.0, mu=3.0, lam=6.0), (0.5, 0.25)),
])
def test_steady_state(kw, expected):
    assert steady_state(P(**kw)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("kw", [
    dict(a=0.0), dict(b=-1.0), dict(lam=0.0), dict(mu=math.nan), dict(chi=-0.1),
    dict(dim=0), dict(dim=4), dict(dim=1.5),
])
def test_params_rejects_invalid(kw):
    with pytest.raises(ValueError):
        P(**kw)


def test_params_with_and_dict():
    p = P(chi=0.3)
    q = p.with_(b=2.0)
    assert q.b == 2.0 and q.chi == 0.3 and p.b == 1.0
    assert Params(**q.to_dict()) == q


def test_grid_spacing_neumann_and_periodic():
    g = Grid((-400.0,), (400.0,), (8001,))
    assert g.dx == (0.1,) or math.isclose(g.dx[0], 0.1, rel_tol=1e-14)
    x = g.axis(0)
    assert x[0] == -400.0 and math.isclose(x[-1], 400.0, rel_tol=1e-12)
    gp = Grid((0.0,), (10.0,), (20,), Boundary.PERIODIC)
    assert gp.dx == (0.5,)
    assert gp.axis(0)[-1] == 9.5


@pytest.mark.parametrize("lo, hi, n", [((0.0,), (0.0,), (10,)), ((0.0,), (1.0,), (7,)),
                                       ((0.0, 0.0), (1.0,), (10, 10))])
def test_grid_rejects_invalid(lo, hi, n):
    with pytest.raises(ValueError):
        Grid(lo, hi, n)


def test_grid_coords_radius_project():
    g = Grid.uniform(2, 1.0, 11)
    assert g.shape == (11, 11)
    r = g.radius()
    assert r[5, 5] == 0.0 and math.isclose(r[0, 0], math.sqrt(2))
    s = g.project([0.0, 1.0])
    assert np.allclose(s[3], g.axis(1))
    with pytest.raises(ValueError):
        g.project([1.0])


def test_quadrature_weights_integrate_linear_exactly():
    g = Grid((0.0,), (2.0,), (9,))
    x = g.axis(0)
    assert math.isclose(float((g.quadrature_weights() * x).sum()), 2.0, rel_tol=1e-14)
    gp = Grid((0.0, 0.0), (1.0, 2.0), (8, 16), Boundary.PERIODIC)
    assert math.isclose(float(gp.quadrature_weights().sum()), 2.0, rel_tol=1e-14)


def test_field_and_state_shapes():
    g = Grid.uniform(2, 1.0, 8)
    f = Field(g, np.arange(64.0))
    assert f.values.shape == (8, 8) and f.max() == 63.0 and f.min() == 0.0 and f.is_finite()
    with pytest.raises(GridMismatch):
        Field(g, np.zeros(10))
    other = Grid.uniform(2, 2.0, 8)
    with pytest.raises(GridMismatch):
        State(Field(g, np.zeros(64)), Field(other, np.zeros(64)))
    s = State.from_arrays(g, np.ones(64), np.zeros(64), t=1.5)
    c = s.copy()
    c.u.values[0, 0] = 7.0
    assert s.u.values[0, 0] == 1.0 and c.t == 1.5


def test_enforce_nonnegative():
    x = np.array([1.0, -5e-11, 0.0, -1e-12])
    assert enforce_nonnegative(x) == 2
    assert x.min() == 0.0
    with pytest.raises(SchemeFailure) as exc:
        enforce_nonnegative(np.array([1.0, -1e-9]), t=2.0)
    assert exc.value.t == 2.0
    with pytest.raises(UnstableStep):
        enforce_nonnegative(np.array([np.nan]))


def test_run_record_times_strictly_increasing():
    rec = RunRecord(P(), Grid.uniform(1, 1.0, 8), {})
    rec.add_snapshot(0.0, {})
    rec.add_snapshot(1.0, {})
    with pytest.raises(ValueError):
        rec.add_snapshot(1.0, {})
    assert list(rec.times) == [0.0, 1.0]

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from deconflict.controls import ControlSpec
from deconflict.errors import InitialLoss
from deconflict.geometry import (AircraftState, Instance, RelativeVelocity, assess_pair,
                                 closest_approach, conflict_region, detect_conflicts, g_value,
                                 normalize_angle, relative_state, relative_velocity_box)
from deconflict.instances import gen_cp

coord = st.floats(-400, 400, allow_nan=False)
speed = st.floats(-1200, 1200, allow_nan=False)


def head_on():
    return Instance("ho", (AircraftState(-200, 0, 500, 0.0), AircraftState(200, 0, 500, math.pi)))


def test_aircraft_state_invariants():
    assert AircraftState(0, 0, 1, 3 * math.pi).heading == pytest.approx(math.pi)
    assert AircraftState(0, 0, 1, -math.pi).heading == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        AircraftState(0, 0, 0.0, 0.0)
    assert normalize_angle(-math.pi) == math.pi


def test_instance_invariants():
    with pytest.raises(ValueError):
        Instance("one", (AircraftState(0, 0, 1, 0),))
    with pytest.raises(InitialLoss) as err:
        Instance("close", (AircraftState(0, 0, 1, 0), AircraftState(3, 0, 1, 0)))
    assert err.value.pair == (0, 1)


def test_relative_state_head_on():
    dx, dy, v = relative_state(head_on(), 0, 1)
    assert (dx, dy) == (-400, 0)
    assert v.vx == pytest.approx(1000)
    assert v.vy == pytest.approx(0, abs=1e-9)


def test_relative_state_crossing():
    inst = Instance("x", (AircraftState(-200, 0, 500, 0.0), AircraftState(0, -200, 500, math.pi / 2)))
    dx, dy, v = relative_state(inst, 0, 1)
    assert (dx, dy) == (-200, 200)
    assert v.vx == pytest.approx(500)
    assert v.vy == pytest.approx(-500)


def test_relative_state_identical_velocity_and_errors():
    inst = Instance("p", (AircraftState(0, 0, 500, 0.3), AircraftState(0, 10, 500, 0.3)))
    _, _, v = relative_state(inst, 0, 1)
    assert v.vx == pytest.approx(0, abs=1e-12) and v.vy == pytest.approx(0, abs=1e-12)
    with pytest.raises(IndexError):
        relative_state(inst, 0, 2)
    with pytest.raises(ValueError):
        relative_state(inst, 1, 0)


def test_closest_approach_examples():
    t, dmin = closest_approach(-400, 0, RelativeVelocity(1000, 0))
    assert t == pytest.approx(0.4) and dmin == pytest.approx(0.0, abs=1e-9)
    t, dmin = closest_approach(10, 0, RelativeVelocity(1000, 0))
    assert t == pytest.approx(-0.01) and dmin == pytest.approx(10)
    t, dmin = closest_approach(0, 10, RelativeVelocity(0, 0))
    assert t == 0 and dmin == 10


def test_g_value_examples():
    assert g_value(-400, 0, RelativeVelocity(1000, 0), 5) == pytest.approx(-2.5e7)
    assert g_value(3, 4, RelativeVelocity(0, 0), 5) == 0
    assert g_value(-200, 200, RelativeVelocity(500, -500), 5) == pytest.approx(-1.25e7)


def test_assess_pair_examples():
    assert assess_pair(-400, 0, RelativeVelocity(1000, 0), 5).in_conflict
    assert not assess_pair(10, 0, RelativeVelocity(1000, 0), 5).in_conflict
    a = assess_pair(0, 10, RelativeVelocity(0, 0), 5)
    assert not a.in_conflict and a.d_min == 10
    with pytest.raises(InitialLoss):
        assess_pair(1, 1, RelativeVelocity(1, 0), 5)


def _slope(gamma, phi):
    return gamma / phi


def test_conflict_region_examples():
    pg = conflict_region(0, 10, 5)
    slopes = sorted([_slope(pg.gamma_l, pg.phi_l), _slope(pg.gamma_u, pg.phi_u)])
    assert slopes == pytest.approx([-math.sqrt(3), math.sqrt(3)])
    pg = conflict_region(-400, 0, 5)
    slopes = sorted([_slope(pg.gamma_l, pg.phi_l), _slope(pg.gamma_u, pg.phi_u)])
    s = 25 / (5 * math.sqrt(159975))
    assert slopes == pytest.approx([-s, s])
    assert s == pytest.approx(0.01250, abs=5e-6)
    # both boundary lines pass through the origin and the head-on direction is inside
    assert pg.contains(RelativeVelocity(400, 0))
    with pytest.raises(InitialLoss):
        conflict_region(1, 0, 5)


def test_conflict_region_membership_bulk():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(100_000):
        dx, dy = rng.uniform(-100, 100, 2)
        if dx * dx + dy * dy < 25 + 1e-6:
            continue
        v = RelativeVelocity(*rng.uniform(-1000, 1000, 2))
        pg = conflict_region(dx, dy, 5)
        lo, hi = pg.lower_value(v.vx, v.vy), pg.upper_value(v.vx, v.vy)
        if min(abs(lo), abs(hi)) < 1e-9 * math.sqrt(v.norm2):
            continue
        a = assess_pair(dx, dy, v, 5)
        assert pg.contains(v) == (a.g < 0 and a.t_min > 0)
        checked += 1
    assert checked > 90_000


def test_relative_velocity_box_examples():
    c = ControlSpec()
    a = AircraftState(0, 0, 500, 0.0)
    b = AircraftState(0, 50, 500, 0.0)
    box = relative_velocity_box(a, b, c)
    lo = 500 * 0.94 * math.cos(math.pi / 6) - 515
    assert box.vx_lo == pytest.approx(lo) and box.vx_hi == pytest.approx(-lo)
    assert box.vx_lo == pytest.approx(-108.0, abs=0.05)
    fixed = ControlSpec(1.0, 1.0, 0.0, 0.0)
    box = relative_velocity_box(AircraftState(0, 0, 500, 0.4), AircraftState(0, 50, 450, -1.0), fixed)
    vx = 500 * math.cos(0.4) - 450 * math.cos(-1.0)
    vy = 500 * math.sin(0.4) - 450 * math.sin(-1.0)
    assert box.vx_lo == pytest.approx(vx) and box.vx_hi == pytest.approx(vx)
    assert box.vy_lo == pytest.approx(vy) and box.vy_hi == pytest.approx(vy)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3.2, 3.2), st.floats(-3.2, 3.2), st.floats(0.0, 1.4), st.floats(0.0, 0.1))
def test_velocity_box_monotone_and_sound(ha, hb, th, extra):
    a, b = AircraftState(0, 0, 500, ha), AircraftState(0, 50, 540, hb)
    small = ControlSpec(th_lo=-th / 2, th_hi=th / 2)
    big = ControlSpec(th_lo=-min(th / 2 + extra, 1.5), th_hi=min(th / 2 + extra, 1.5))
    bs, bb = relative_velocity_box(a, b, small), relative_velocity_box(a, b, big)
    assert bb.vx_lo <= bs.vx_lo + 1e-9 and bb.vx_hi >= bs.vx_hi - 1e-9
    assert bb.vy_lo <= bs.vy_lo + 1e-9 and bb.vy_hi >= bs.vy_hi - 1e-9
    rng = np.random.default_rng(0)
    for _ in range(20):
        qa, qb = rng.uniform(small.q_lo, small.q_hi, 2)
        ta, tb = rng.uniform(small.th_lo, small.th_hi, 2)
        va, vb = a.velocity(qa, ta), b.velocity(qb, tb)
        assert bs.contains(RelativeVelocity(va[0] - vb[0], va[1] - vb[1]), tol=1e-9)


def test_detect_conflicts_cp4():
    rep = detect_conflicts(gen_cp(4))
    assert rep.n_conflicts == 6
    assert all(a.d_min == pytest.approx(0, abs=1e-9) for a in rep.assessments.values())
    assert rep.d_min_total == pytest.approx(0, abs=1e-8)


def test_detect_conflicts_diverging():
    inst = Instance("div", (AircraftState(-10, 0, 500, math.pi), AircraftState(10, 0, 500, 0.0)))
    assert detect_conflicts(inst).n_conflicts == 0


@settings(max_examples=300, deadline=None)
@given(coord, coord, speed, speed, st.floats(0.1, 10))
def test_scaling_consistency(dx, dy, vx, vy, s):
    assume(dx * dx + dy * dy >= 25 and vx * vx + vy * vy > 1)
    t1, d1 = closest_approach(dx, dy, RelativeVelocity(vx, vy))
    t2, d2 = closest_approach(s * dx, s * dy, RelativeVelocity(s * vx, s * vy))
    assert t2 == pytest.approx(t1, rel=1e-9, abs=1e-12)
    assert d2 == pytest.approx(s * d1, rel=1e-7, abs=1e-6)


@settings(max_examples=300, deadline=None)
@given(coord, coord, speed, speed)
def test_symmetry(dx, dy, vx, vy):
    assume(dx * dx + dy * dy >= 25)
    a = assess_pair(dx, dy, RelativeVelocity(vx, vy), 5)
    b = assess_pair(-dx, -dy, RelativeVelocity(-vx, -vy), 5)
    assert a.g == pytest.approx(b.g, rel=1e-12, abs=1e-6)
    assert a.t_min == pytest.approx(b.t_min, rel=1e-12, abs=1e-15)
    assert a.d_min == pytest.approx(b.d_min, rel=1e-12, abs=1e-9)
    assert a.in_conflict == b.in_conflict


@settings(max_examples=300, deadline=None)
@given(coord, coord, speed, speed)
def test_quadratic_identity(dx, dy, vx, vy):
    v = RelativeVelocity(vx, vy)
    assume(dx * dx + dy * dy >= 25 and v.norm2 > 1)
    d = 5.0
    t = -(dx * vx + dy * vy) / v.norm2
    f = (dx + vx * t) ** 2 + (dy + vy * t) ** 2 - d * d
    g = g_value(dx, dy, v, d)
    scale = (dx * dx + dy * dy + d * d) * v.norm2
    assert abs(f * v.norm2 - g) <= 1e-9 * scale


@settings(max_examples=100, deadline=None)
@given(coord, coord, speed, speed)
def test_dmin_matches_dense_sampling(dx, dy, vx, vy):
    v = RelativeVelocity(vx, vy)
    assume(dx * dx + dy * dy >= 25 and v.norm2 > 1)
    a = assess_pair(dx, dy, v, 5)
    horizon = max(2 * a.t_min, 1.0)
    ts = np.linspace(0, horizon, 20001)
    dist = np.hypot(dx + vx * ts, dy + vy * ts)
    assert dist.min() >= a.d_min - 1e-9
    assert dist.min() <= a.d_min + np.hypot(vx, vy) * horizon / 20000 + 1e-9
    if a.d_min < 5 - 1e-9:
        assert a.in_conflict
    if a.d_min > 5 + 1e-9:
        assert not a.in_conflict

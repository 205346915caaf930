import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate

from tetherrisk.errors import DomainError, PlanningError, ValidationError
from tetherrisk.grid import GridMap, load_map, segment_blocked
from tetherrisk.tether import (
    CatenaryParams,
    TetherState,
    cartesian_to_polar,
    catenary_correct,
    catenary_span,
    effective_polar,
    localize,
    new_contact_point,
    obstacle_confined,
    plan_contacts,
    polar_to_cartesian,
    ray_cast_reduce,
    tension,
    wrap_angle,
)

from helpers import FIXTURES, planar

RHO_G = CatenaryParams().rho * CatenaryParams().g
thetas = st.floats(math.radians(0.5), math.radians(89.5))


# tension ------------------------------------------------------------------------

def test_vertical_thrust_has_no_tension():
    for th in (0.0, 0.3, 1.0):
        f = tension(math.pi / 2, th, 6.0)
        assert f.T == pytest.approx(0.0, abs=1e-12)
        assert f.F == pytest.approx(6.0)


def test_level_tether_at_45_deg_lean():
    f = tension(math.radians(45), 0.0, 6.0)
    assert f.F == pytest.approx(6 / (math.sqrt(2) / 2), abs=1e-12)
    assert round(f.F, 3) == 8.485
    assert f.T == pytest.approx(6.0, abs=1e-12)


def test_unbalanced_regime_is_an_error():
    with pytest.raises(DomainError, match="unbalanced"):
        tension(math.radians(30), math.radians(40), 6.0)


@given(st.floats(0.0, math.radians(80)), st.floats(0.01, 1.5), st.floats(0.5, 20))
def test_free_body_balance(theta, dbeta, G):
    beta = min(theta + dbeta, math.pi / 2)
    assume(math.sin(beta) - math.tan(theta) * math.cos(beta) > 1e-6)
    f = tension(beta, theta, G)
    assert f.F * math.cos(beta) == pytest.approx(f.T * math.cos(theta), abs=1e-9 * f.F)
    assert f.F * math.sin(beta) == pytest.approx(f.T * math.sin(theta) + G, rel=1e-12)


# catenary -----------------------------------------------------------------------

def test_catenary_45_deg_unit_parameter():
    c = catenary_correct(math.radians(45), T0=1.0 * RHO_G)
    assert c.a == pytest.approx(1.0)
    assert c.L_x == pytest.approx(math.log(1 + math.sqrt(2)), abs=1e-12)
    assert c.L_y == pytest.approx(math.sqrt(2) - 1, abs=1e-12)
    assert math.degrees(c.theta_r) == pytest.approx(25.18, abs=0.01)
    assert c.L_s == pytest.approx(1.0, abs=1e-12)


def test_catenary_domain_errors():
    with pytest.raises(DomainError):
        catenary_correct(0.0, T0=1.0)
    with pytest.raises(DomainError):
        catenary_correct(math.pi / 2, T0=1.0)
    with pytest.raises(DomainError):
        catenary_correct(0.5, T0=0.0)
    with pytest.raises(ValueError):
        catenary_correct(0.5)
    with pytest.raises(DomainError):
        catenary_span(0.5, -1.0, 2.0)


@given(thetas, st.floats(1e-3, 1e4))
def test_real_elevation_below_sensed(theta, a):
    c = catenary_correct(theta, T0=a * RHO_G)
    assert c.theta_r < theta
    assert c.L_r < c.L_s


@given(thetas, st.floats(1e-2, 1e3), st.floats(1.01, 10.0))
def test_bias_shrinks_as_parameter_grows(theta, a, k):
    L = 5.0
    near = catenary_span(theta, L, a)
    far = catenary_span(theta, L, a * k)
    assert theta - far.theta_r <= theta - near.theta_r


@given(thetas)
def test_straight_limit(theta):
    c = catenary_span(theta, 3.0, 1e9)
    assert c.theta_r == pytest.approx(theta, rel=1e-6)
    assert c.L_r == pytest.approx(c.L_s, rel=1e-6)


@given(thetas, st.floats(0.05, 200.0))
def test_arc_length_integration_oracle(theta, a):
    c = catenary_correct(theta, T0=a * RHO_G)
    arc, _ = integrate.quad(lambda x: math.cosh(x / c.a), 0.0, c.L_x, epsabs=0, epsrel=1e-13)
    assert arc == pytest.approx(c.L_s, rel=1e-9)


@given(thetas, st.floats(0.01, 500.0))
def test_encoder_mode_recovers_length(theta, L):
    assert catenary_correct(theta, L_enc=L).L_s == pytest.approx(L, rel=1e-12)


def test_encoder_and_span_agree_at_the_vertex_parameter():
    th, L = math.radians(35), 4.0
    enc = catenary_correct(th, L_enc=L)
    span = catenary_span(th, L, L / math.tan(th))
    assert span.L_r == pytest.approx(enc.L_r, rel=1e-12)
    assert span.theta_r == pytest.approx(enc.theta_r, rel=1e-12)


# localize ------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["encoder", "span"])
def test_shallow_short_tether_barely_bends(mode):
    pre = localize(1.0, math.radians(0.5), 0.3, math.radians(60), mode="preliminary")
    cor = localize(1.0, math.radians(0.5), 0.3, math.radians(60), mode=mode)
    assert np.linalg.norm(cor - pre) <= 0.01 * np.linalg.norm(pre)


@given(st.floats(0.5, 20.0), st.floats(math.radians(1), math.radians(80)), st.floats(-math.pi, math.pi),
       st.floats(0.02, 0.5), st.sampled_from(["encoder", "span"]))
def test_corrected_height_below_preliminary(L, theta, phi, dbeta, mode):
    beta = min(theta + dbeta, math.radians(89.5))
    pre = localize(L, theta, phi, beta, mode="preliminary")
    cor = localize(L, theta, phi, beta, mode=mode)
    assert cor[1] < pre[1]


@given(st.floats(0.5, 20.0), st.floats(math.radians(1), math.radians(80)), st.floats(0.02, 0.5))
def test_tension_mode_lowers_elevation(L, theta, dbeta):
    # tension mode sizes the curve from the tension alone, so only the angle is comparable
    beta = min(theta + dbeta, math.radians(89.5))
    cor = cartesian_to_polar(localize(L, theta, 0.0, beta, mode="tension"))
    assert cor.theta < theta


@given(st.floats(1.0, 10.0), st.floats(math.radians(5), math.radians(60)), st.floats(-math.pi, math.pi),
       st.floats(-math.pi, math.pi))
def test_azimuth_rotates_about_vertical(L, theta, phi, dphi):
    beta = math.radians(75)
    a = localize(L, theta, phi, beta, mode="span")
    b = localize(L, theta, phi + dphi, beta, mode="span")
    c, s = math.cos(dphi), math.sin(dphi)
    # rotation about +y taking azimuth phi to phi + dphi
    R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    assert np.allclose(R @ a, b, atol=1e-12)


def test_localize_unknown_mode():
    with pytest.raises(ValueError):
        localize(1.0, 0.3, 0.0, 1.0, mode="guess")


# polar coordinates ------------------------------------------------------------------

@given(st.floats(0.01, 50), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi))
def test_polar_round_trip(L, theta, phi):
    p = cartesian_to_polar(polar_to_cartesian(L, theta, phi))
    assert p.L == pytest.approx(L, rel=1e-12)
    assert p.theta == pytest.approx(theta, abs=1e-9)
    assert wrap_angle(p.phi - phi) == pytest.approx(0.0, abs=1e-9)


def test_effective_polar_examples():
    origin_only = TetherState(((0.0, 0.0, 0.0),))
    p = effective_polar((0.0, 0.0, 2.0), origin_only)
    assert (p.L, p.theta, p.phi) == (2.0, 0.0, 0.0)
    wrapped = TetherState(((0.0, 0.0, 0.0), (3.0, 0.0, 0.0)))
    assert effective_polar((3.0, 2.0, 0.0), wrapped).L == pytest.approx(5.0)
    with pytest.raises(DomainError):
        effective_polar((3.0, 0.0, 0.0), wrapped)


@given(st.floats(0.1, 20), st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi),
       st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=0, max_size=3))
def test_effective_polar_inverts_polar_map(L, theta, phi, contacts):
    t = TetherState(((0.0, 0.0, 0.0), *contacts))
    p = t.top + polar_to_cartesian(L, theta, phi)
    eff = effective_polar(p, t)
    assert eff.L - t.L_sta == pytest.approx(L, rel=1e-9)
    assert np.allclose(t.top + polar_to_cartesian(eff.L - t.L_sta, eff.theta, eff.phi), p, atol=1e-12)


def test_tether_state_invariants():
    with pytest.raises(ValidationError):
        TetherState(())
    t = TetherState(((0.0, 0.0, 0.0),))
    assert t.L_sta == 0 and t.n_contacts == 0
    t = TetherState(((0.0, 0.0, 0.0), (3.0, 4.0, 0.0), (3.0, 4.0, 2.0)))
    assert t.segments == [5.0, 2.0] and t.L_sta == 7.0


# reachable space ----------------------------------------------------------------------

def test_reduce_empty_map_unchanged():
    m = GridMap((5, 5, 5), 1.0, start=(0, 0, 0))
    assert ray_cast_reduce(m) == m


def test_reduce_single_obstacle_shadow():
    m = planar(7, 1, [(3, 0)])
    r = ray_cast_reduce(m)
    assert {(4, 0, 0), (5, 0, 0), (6, 0, 0)} <= r.occupied
    assert all(r.is_free((i, 0, 0)) for i in range(3))


def test_reduce_fixture_fraction():
    m = load_map(FIXTURES / "reduce_3obs.json")
    r = ray_cast_reduce(m)
    assert len(r.free_cells) / len(m.free_cells) == pytest.approx(0.60, abs=0.05)


@given(st.integers(0, 2**32 - 1))
def test_reduce_subset_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    occ = {tuple(int(v) for v in c) for c in rng.integers(1, 6, size=(6, 3))}
    m = GridMap((6, 6, 6), 1.0, frozenset(occ), start=(0, 0, 0))
    r = ray_cast_reduce(m)
    assert set(r.free_cells) <= set(m.free_cells)
    assert ray_cast_reduce(r) == r
    # every kept cell really is visible from the origin
    for c in r.free_cells:
        assert not segment_blocked(m, m.tether_origin, m.center(c))


# obstacle confinement --------------------------------------------------------------------

CUBE = GridMap((6, 6, 6), 1.0, frozenset({(2, 2, 2)}), start=(0, 0, 0))


def point_in_triangle(tri, q) -> bool:
    d = [(b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) for a, b in zip(tri, np.roll(tri, -1, axis=0))]
    return all(x > 0 for x in d) or all(x < 0 for x in d)


def test_confined_requires_obstacles():
    assert not obstacle_confined((0, 0, 0), (5, 0, 0), (0, 5, 1), GridMap((6, 6, 6), 1.0, start=(0, 0, 0)))


def test_confined_in_all_three_projections():
    A, B, C = (0.5, 0.5, 5.5), (5.5, 0.5, 0.5), (0.5, 5.5, 0.5)
    assert obstacle_confined(A, B, C, CUBE)


def test_not_confined_when_one_projection_misses():
    A, B, C = (6.0, 5.0, 0.0), (5.0, 0.0, 4.0), (1.0, 5.0, 3.0)
    P = np.array([A, B, C])
    c = np.array([2.5, 2.5, 2.5])
    assert not point_in_triangle(P[:, [0, 1]], c[[0, 1]])
    assert point_in_triangle(P[:, [1, 2]], c[[1, 2]]) and point_in_triangle(P[:, [0, 2]], c[[0, 2]])
    assert not obstacle_confined(A, B, C, CUBE)


def test_collinear_triangle_confines_nothing():
    assert not obstacle_confined((0.5, 0.5, 0.5), (2.5, 2.5, 2.5), (5.5, 5.5, 5.5), CUBE)


@given(st.lists(st.floats(0, 6), min_size=9, max_size=9))
def test_confined_matches_projection_oracle(v):
    P = np.array(v).reshape(3, 3)
    c = np.array([2.5, 2.5, 2.5])
    areas = []
    for a, b in ((0, 1), (1, 2), (0, 2)):
        q = P[:, [a, b]]
        areas.append(abs((q[1, 0] - q[0, 0]) * (q[2, 1] - q[0, 1]) - (q[1, 1] - q[0, 1]) * (q[2, 0] - q[0, 0])))
    assume(min(areas) > 1e-3)
    expect = all(point_in_triangle(P[:, [a, b]], c[[a, b]]) for a, b in ((0, 1), (1, 2), (0, 2)))
    assert obstacle_confined(*P, CUBE) == expect


# contact placement ----------------------------------------------------------------------

def first_touch_oracle(m, last, prev, nxt, steps=20000):
    """Sweep the segment and report the block corner nearest the last clear segment."""
    last, prev, nxt = (np.asarray(v, float) for v in (last, prev, nxt))
    clear = prev
    for t in np.linspace(0, 1, steps):
        q = prev + t * (nxt - prev)
        if segment_blocked(m, last, q):
            break
        clear = q
    corners = [np.array([x, y, 0.5]) for c in m.occupied for x in (c[0], c[0] + 1) for y in (c[1], c[1] + 1)]

    def dist(p):
        d = clear - last
        s = np.clip((p - last) @ d / (d @ d), 0, 1)
        return np.linalg.norm(last + s * d - p)

    return min(corners, key=dist)


@pytest.mark.parametrize("prev, nxt, corner", [
    ((4.5, 4.5, 0.5), (4.5, 2.5, 0.5), (2.0, 3.0, 0.5)),
    ((4.5, 0.5, 0.5), (4.5, 2.5, 0.5), (2.0, 2.0, 0.5)),
    ((2.5, 4.5, 0.5), (4.5, 2.5, 0.5), (2.0, 3.0, 0.5)),
])
def test_contact_on_single_block_corner(prev, nxt, corner):
    m = planar(5, 5, [(2, 2)])
    last = (0.5, 2.5, 0.5)
    cp = new_contact_point(last, prev, nxt, m)
    assert np.allclose(cp, corner, atol=1e-9)
    assert np.allclose(cp, first_touch_oracle(m, last, prev, nxt), atol=1e-9)


def test_contact_along_an_edge_takes_the_far_corner():
    # the sweep ends lying along the block's top face; the tether bends at its far end
    m = planar(6, 4, [(2, 1), (3, 1)])
    cp = new_contact_point((0.5, 2.0, 0.5), (5.5, 3.5, 0.5), (5.5, 0.5, 0.5), m)
    assert np.allclose(cp, (4.0, 2.0, 0.5), atol=1e-9)
    again = new_contact_point((0.5, 2.0, 0.5), (5.5, 3.5, 0.5), (5.5, 0.5, 0.5), m)
    assert np.array_equal(cp, again)


def test_contact_preconditions():
    m = planar(5, 5, [(2, 2)])
    with pytest.raises(ValueError, match="already sees"):
        new_contact_point((0.5, 0.5, 0.5), (0.5, 4.5, 0.5), (1.5, 4.5, 0.5), m)
    with pytest.raises(ValueError, match="previous waypoint"):
        new_contact_point((0.5, 2.5, 0.5), (4.5, 2.5, 0.5), (4.5, 0.5, 0.5), m)


# contact planning ------------------------------------------------------------------------

CASES = json.loads((FIXTURES / "contacts" / "expected.json").read_text())


def load_case(name):
    m = load_map(FIXTURES / "contacts" / f"{name}_map.json")
    path = [tuple(s) for s in json.loads((FIXTURES / "contacts" / f"{name}_path.json").read_text())["path"]]
    return m, path


def check_relaxation_rule(m, wps):
    for prev, cur in zip(wps, wps[1:]):
        assert cur.tether.cp_stack[0] == wps[0].tether.cp_stack[0]
        stack = prev.tether.cp_stack
        if len(stack) < 2:
            assert "pop" not in cur.event
            continue
        clear = not segment_blocked(m, stack[-2], cur.position)
        confined = obstacle_confined(stack[-1], stack[-2], cur.position, m)
        assert ("pop" in cur.event) == (clear and not confined)


@pytest.mark.parametrize("name", sorted(CASES))
def test_contact_hand_traces(name):
    m, path = load_case(name)
    wps = plan_contacts(m, path)
    assert [w.n_contacts for w in wps] == CASES[name]["contacts"]
    assert [w.event for w in wps] == CASES[name]["events"]
    check_relaxation_rule(m, wps)
    if name == "none":
        assert all(w.tether.cp_stack == (m.tether_origin,) for w in wps)
    if name == "wrap_relax":
        assert wps[-1].contact.tolist() == list(m.tether_origin)


def test_double_wrap_keeps_confined_contacts():
    m, path = load_case("double_wrap")
    wps = plan_contacts(m, path)
    assert max(len(w.tether.cp_stack) for w in wps) == 3
    confined = []
    for i, (prev, cur) in enumerate(zip(wps, wps[1:]), 1):
        stack = prev.tether.cp_stack
        if len(stack) >= 2 and not segment_blocked(m, stack[-2], cur.position):
            assert obstacle_confined(stack[-1], stack[-2], cur.position, m)
            assert "pop" not in cur.event
            confined.append(i)
    # sight back to the origin returns at (3,3) and (4,3) but the first post stays wrapped
    assert confined == [6, 7]


@given(st.sampled_from(["wrap_relax", "double_wrap"]), st.integers(0, 2**32 - 1))
def test_relaxation_rule_on_random_walks(name, seed):
    m, _ = load_case(name)
    rng = np.random.default_rng(seed)
    path = [m.start]
    for _ in range(14):
        x, y, z = path[-1]
        steps = [s for s in ((x + 1, y, z), (x - 1, y, z), (x, y + 1, z), (x, y - 1, z)) if m.is_free(s)]
        path.append(steps[int(rng.integers(len(steps)))])
    try:
        wps = plan_contacts(m, path)
    except PlanningError:
        assume(False)
    check_relaxation_rule(m, wps)
    for w in wps:
        assert w.tether.cp_stack[0] == m.tether_origin
        assert not segment_blocked(m, w.contact, w.position)


def test_contacts_reject_occupied_path():
    m, _ = load_case("wrap_relax")
    with pytest.raises(ValidationError):
        plan_contacts(m, [(0, 0, 0), (1, 0, 0), (2, 1, 0)])

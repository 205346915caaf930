"""Tether geometry and mechanics.

Polar coordinates follow the y-up convention::

    x = L cos(theta) sin(phi)
    y = L sin(theta)
    z = L cos(theta) cos(phi)

so ``theta`` is elevation from the horizontal x-z plane and ``phi`` is the
azimuth measured from +z towards +x.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, PlanningError, ValidationError
from .grid import GridMap, segment_blocked, segment_hits

GRAVITY = 9.81


@dataclass(frozen=True)
class CatenaryParams:
    rho: float = 0.0061
    g: float = GRAVITY
    G: float = 6.0

    def __post_init__(self):
        if not (self.rho > 0 and self.g > 0 and self.G > 0):
            raise ValidationError("rho, g and G must all be positive")


@dataclass(frozen=True)
class PolarCoord:
    L: float
    theta: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.theta, self.phi])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2 * math.pi)
    return math.pi if w == -math.pi else w


def polar_to_cartesian(L: float, theta: float, phi: float) -> np.ndarray:
    c = math.cos(theta)
    return np.array([L * c * math.sin(phi), L * math.sin(theta), L * c * math.cos(phi)])


def cartesian_to_polar(v: Sequence[float]) -> PolarCoord:
    x, y, z = (float(c) for c in v)
    L = math.sqrt(x * x + y * y + z * z)
    if L == 0:
        raise DomainError("angles undefined at zero length")
    return PolarCoord(L, math.asin(max(-1.0, min(1.0, y / L))), math.atan2(x, z))


# mechanics ---------------------------------------------------------------

@dataclass(frozen=True)
class Tension:
    F: float
    T: float


def tension(beta: float, theta_s: float, G: float) -> Tension:
    """Thrust F and tether tension T balancing weight G at lean angle beta."""
    denom = math.sin(beta) - math.tan(theta_s) * math.cos(beta)
    if not denom > 1e-12:
        raise DomainError(
            f"unbalanced regime: sin(beta) - tan(theta)cos(beta) = {denom:.3g} <= 0 "
            f"(beta={math.degrees(beta):.2f} deg, theta={math.degrees(theta_s):.2f} deg)"
        )
    F = G / denom
    T = G * math.cos(beta) / (denom * math.cos(theta_s))
    return Tension(F, max(T, 0.0))


@dataclass(frozen=True)
class CatenaryResult:
    theta_r: float
    L_r: float
    L_s: float
    a: float
    L_x: float
    L_y: float


def _span(theta_s: float, a: float, ds: float) -> CatenaryResult:
    """Catenary y = a cosh(x/a) whose slope rises by ``ds`` up to tan(theta_s) at the UAV.

    The arc length is a*ds.  Differences of asinh/cosh are rewritten to
    avoid cancellation when the span is tiny compared with ``a``.
    """
    s1 = math.tan(theta_s)
    s0 = s1 - ds
    c0, c1 = math.hypot(1.0, s0), math.hypot(1.0, s1)
    if s0 * s1 >= 0:
        w = ds * (s1 + s0) / (s1 * c0 + s0 * c1) if (s1 * c0 + s0 * c1) != 0 else 0.0
    else:
        w = s1 * c0 - s0 * c1
    L_x = a * math.asinh(w)
    L_y = a * ds * (s1 + s0) / (c1 + c0)
    L_s = a * ds
    return CatenaryResult(math.atan2(L_y, L_x), math.hypot(L_x, L_y), L_s, a, L_x, L_y)


def _check_theta(theta_s: float) -> None:
    if not 0 < theta_s < math.pi / 2:
        raise DomainError(f"sensed elevation must lie in (0, 90) deg, got {math.degrees(theta_s):.3f}")


def catenary_correct(
    theta_s: float,
    T0: float | None = None,
    L_enc: float | None = None,
    params: CatenaryParams = CatenaryParams(),
) -> CatenaryResult:
    """Real elevation and straight-line length of a tether anchored at the catenary vertex.

    Tension mode (``T0``) uses a = T0/(rho g); encoder mode (``L_enc``) uses
    a = L_enc/tan(theta_s), which makes the recovered arc length equal L_enc.
    """
    _check_theta(theta_s)
    if (T0 is None) == (L_enc is None):
        raise ValueError("give exactly one of T0 (tension mode) or L_enc (encoder mode)")
    if T0 is not None:
        a = T0 / (params.rho * params.g)
    else:
        a = L_enc / math.tan(theta_s)
    if not a > 0 or not math.isfinite(a):
        raise DomainError(f"catenary parameter must be positive and finite, got {a}")
    return _span(theta_s, a, math.tan(theta_s))


def catenary_span(theta_s: float, L_enc: float, a: float) -> CatenaryResult:
    """Catenary of arc length ``L_enc`` with parameter ``a`` ending at slope tan(theta_s).

    The reel need not sit at the vertex; when ``a = L_enc/tan(theta_s)`` this
    is the same curve as the encoder mode of :func:`catenary_correct`, and as
    ``a`` grows the tether straightens towards the sensed direction.
    """
    _check_theta(theta_s)
    if not L_enc > 0:
        raise DomainError(f"tether length must be positive, got {L_enc}")
    if not a > 0 or not math.isfinite(a):
        raise DomainError(f"catenary parameter must be positive and finite, got {a}")
    return _span(theta_s, a, L_enc / a)


LOCALIZE_MODES = ("tension", "encoder", "span", "preliminary")


def localize(
    L_enc: float,
    theta_s: float,
    phi_s: float,
    beta: float,
    params: CatenaryParams = CatenaryParams(),
    mode: str = "tension",
) -> np.ndarray:
    """UAV position relative to the reel from tether sensing.

    ``preliminary`` treats the tether as straight; ``span`` combines the
    tension-derived a with the encoder length.
    """
    if mode == "preliminary":
        return polar_to_cartesian(L_enc, theta_s, phi_s)
    if mode == "tension":
        cat = catenary_correct(theta_s, T0=tension(beta, theta_s, params.G).T, params=params)
    elif mode == "encoder":
        cat = catenary_correct(theta_s, L_enc=L_enc, params=params)
    elif mode == "span":
        a = tension(beta, theta_s, params.G).T / (params.rho * params.g)
        cat = catenary_span(theta_s, L_enc, a)
    else:
        raise ValueError(f"mode must be one of {LOCALIZE_MODES}, got {mode!r}")
    return polar_to_cartesian(cat.L_r, cat.theta_r, phi_s)


# reachable space -----------------------------------------------------------

def _blocked_from(m: GridMap, origin: np.ndarray, ends: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Vectorised segment test origin -> each row of ``ends``."""
    boxes = m.occupied_array
    out = np.zeros(len(ends), dtype=bool)
    if len(boxes) == 0 or len(ends) == 0:
        return out
    eps = 1e-9 * m.resolution
    lo = boxes * m.resolution + eps
    hi = (boxes + 1) * m.resolution - eps
    for start in range(0, len(ends), chunk):
        d = ends[start:start + chunk] - origin
        t0 = np.zeros((len(d), len(boxes)))
        t1 = np.ones((len(d), len(boxes)))
        ok = np.ones((len(d), len(boxes)), dtype=bool)
        for ax in range(3):
            dax = d[:, ax:ax + 1]
            flat = np.abs(dax) < 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (lo[None, :, ax] - origin[ax]) / dax
                tb = (hi[None, :, ax] - origin[ax]) / dax
            inside = (origin[ax] > lo[None, :, ax]) & (origin[ax] < hi[None, :, ax])
            ok &= np.where(flat, inside, True)
            t0 = np.where(flat, t0, np.maximum(t0, np.minimum(ta, tb)))
            t1 = np.where(flat, t1, np.minimum(t1, np.maximum(ta, tb)))
        out[start:start + chunk] = (ok & (t0 < t1)).any(axis=1)
    return out


def ray_cast_reduce(m: GridMap, origin: Sequence[float] | None = None, max_passes: int = 64) -> GridMap:
    """Occupy every free cell the taut tether from ``origin`` cannot reach straight.

    A free cell is kept when the segment from the origin to its center is
    clear.  Newly blocked cells shadow further cells, so the rule is applied
    until nothing changes, which makes the reduction idempotent.
    """
    origin = np.asarray(m.tether_origin if origin is None else origin, dtype=float)
    if not m.contains_point(origin):
        raise ValueError(f"origin {origin.tolist()} outside the map")
    home = m.cell_of(origin)
    current = m
    for _ in range(max_passes):
        free = [c for c in current.free_cells if c != home]
        if not free:
            return current
        centers = (np.asarray(free, dtype=float) + 0.5) * m.resolution
        blocked = _blocked_from(current, origin, centers)
        if not blocked.any():
            return current
        shadow = [c for c, b in zip(free, blocked) if b]
        if current.start in shadow:
            raise ValidationError(f"start {current.start} is not reachable by a straight tether from {origin.tolist()}")
        current = current.with_occupied(current.occupied | set(shadow))
    raise PlanningError("reachable-space reduction did not converge")


# contact planning ----------------------------------------------------------

_PLANES = ((0, 1), (1, 2), (0, 2))


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def obstacle_confined(A: Sequence[float], B: Sequence[float], C: Sequence[float], m: GridMap, tol: float = 1e-9) -> bool:
    """True iff some occupied cell projects inside triangle ABC in all three coordinate planes.

    A plane where the triangle projects to a segment counts the cell when its
    open projected square crosses that segment.  A triangle collinear in 3D
    confines nothing.
    """
    if len(m.occupied_array) == 0:
        return False
    P = np.array([A, B, C], dtype=float)
    if np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0])) <= tol * max(1.0, np.abs(P).max()) ** 2:
        return False
    boxes = m.occupied_array.astype(float)
    cent = (boxes + 0.5) * m.resolution
    inside = np.ones(len(boxes), dtype=bool)
    scale = tol * m.resolution ** 2
    for a, b in _PLANES:
        p = P[:, [a, b]]
        q = cent[:, [a, b]]
        area = _cross2(p[1] - p[0], p[2] - p[0])
        if abs(area) > scale:
            d1 = _cross2(p[1] - p[0], q - p[0])
            d2 = _cross2(p[2] - p[1], q - p[1])
            d3 = _cross2(p[0] - p[2], q - p[2])
            sign = np.sign(area)
            inside &= (d1 * sign > scale) & (d2 * sign > scale) & (d3 * sign > scale)
        else:
            # flat in this view: the projection is the longest side
            pairs = [(0, 1), (1, 2), (0, 2)]
            i, j = max(pairs, key=lambda ij: np.linalg.norm(p[ij[0]] - p[ij[1]]))
            lo = boxes[:, [a, b]] * m.resolution
            inside &= _segment_crosses_squares(p[i], p[j], lo, lo + m.resolution)
        if not inside.any():
            return False
    return bool(inside.any())


def _segment_crosses_squares(u: np.ndarray, v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = v - u
    t0 = np.zeros(len(lo))
    t1 = np.ones(len(lo))
    ok = np.ones(len(lo), dtype=bool)
    for ax in range(2):
        if abs(d[ax]) < 1e-15:
            ok &= (u[ax] > lo[:, ax]) & (u[ax] < hi[:, ax])
            continue
        ta = (lo[:, ax] - u[ax]) / d[ax]
        tb = (hi[:, ax] - u[ax]) / d[ax]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return ok & (t0 < t1)


_BOX_EDGES = [
    (c, c2)
    for c, c2 in itertools.combinations(itertools.product((0, 1), repeat=3), 2)
    if sum(x != y for x, y in zip(c, c2)) == 1
]


def _closest_on_segments(p0, p1, q0, q1) -> tuple[np.ndarray, float]:
    """Closest point on segment q0-q1 to segment p0-p1, and the distance."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c, b = d1 @ r, d1 @ d2
    denom = a * e - b * b
    s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-15 else 0.0
    t = (b * s + f) / e
    if t < 0 or t > 1:
        t = min(max(t, 0.0), 1.0)
        s = min(max((b * t - c) / a, 0.0), 1.0) if a > 0 else 0.0
    cp, cq = p0 + s * d1, q0 + t * d2
    return cq, float(np.linalg.norm(cp - cq))


_TOUCH = 1e-7


def new_contact_point(
    last_cp: Sequence[float],
    prev_wp: Sequence[float],
    next_wp: Sequence[float],
    m: GridMap,
    samples: int = 64,
) -> np.ndarray:
    """Where the taut tether from ``last_cp`` wraps while the UAV moves prev -> next.

    The segment from ``last_cp`` sweeps from ``prev_wp`` to ``next_wp``; the
    contact is the point on the occupied-cell edges it first touches, placed
    exactly on the edge.  When it touches several (lying along an edge),
    the one farthest from ``last_cp`` wins; remaining ties go to the lowest
    (cell, edge) index.
    """
    return _wrap(last_cp, prev_wp, next_wp, m, samples)[0]


def _inside_occupied(m: GridMap, p: np.ndarray, tol: float = 1e-9) -> bool:
    """True if ``p`` lies strictly inside an occupied cell (faces do not count)."""
    rel = p / m.resolution
    lo = np.floor(rel - tol).astype(int)
    hi = np.floor(rel + tol).astype(int)
    for cell in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))):
        if cell in m.occupied:
            inner = (rel > np.asarray(cell) + tol) & (rel < np.asarray(cell) + 1 - tol)
            if inner.all():
                return True
    return False


def _wrap(last_cp, prev_wp, next_wp, m: GridMap, samples: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """New contact point plus the UAV position along the sweep where it formed."""
    last_cp, prev_wp, next_wp = (np.asarray(v, dtype=float) for v in (last_cp, prev_wp, next_wp))
    if segment_blocked(m, last_cp, prev_wp):
        raise ValueError("precondition: last contact must see the previous waypoint")
    if not segment_blocked(m, last_cp, next_wp):
        raise ValueError("precondition: last contact already sees the next waypoint")

    def target(t: float) -> np.ndarray:
        return prev_wp + t * (next_wp - prev_wp)

    lo_t, hi_t = 0.0, 1.0
    for k in range(1, samples + 1):
        t = k / samples
        if segment_blocked(m, last_cp, target(t)):
            lo_t, hi_t = (k - 1) / samples, t
            break
    for _ in range(60):
        mid = 0.5 * (lo_t + hi_t)
        if segment_blocked(m, last_cp, target(mid)):
            hi_t = mid
        else:
            lo_t = mid
    graze_end = target(lo_t)
    hit = segment_hits(m, last_cp, target(hi_t))
    boxes = m.occupied_array[hit]

    res = m.resolution
    candidates = []
    for box in sorted(map(tuple, boxes)):
        corner0 = np.asarray(box, dtype=float) * res
        for e_idx, (c0, c1) in enumerate(_BOX_EDGES):
            q0 = corner0 + np.asarray(c0) * res
            q1 = corner0 + np.asarray(c1) * res
            point, dist = _closest_on_segments(last_cp, graze_end, q0, q1)
            reach = float(np.linalg.norm(point - last_cp))
            touching = dist <= _TOUCH * res
            key = (0.0 if touching else round(dist / res, 9), -round(reach / res, 9) if touching else 0.0)
            candidates.append((key, box, e_idx, point))
    candidates.sort(key=lambda c: c[:3])
    for _, _, _, point in candidates:
        if not m.contains_point(point) or _inside_occupied(m, point):
            continue
        if segment_blocked(m, last_cp, point):
            continue
        return point, graze_end
    raise PlanningError(f"no contact point found between {last_cp.tolist()} and {next_wp.tolist()}")


@dataclass(frozen=True)
class TetherState:
    cp_stack: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.cp_stack) == 0:
            raise ValidationError("contact stack must hold at least the origin")

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.cp_stack[0])

    @property
    def top(self) -> np.ndarray:
        return np.asarray(self.cp_stack[-1])

    @property
    def segments(self) -> list[float]:
        pts = np.asarray(self.cp_stack)
        return [float(v) for v in np.linalg.norm(np.diff(pts, axis=0), axis=1)]

    @property
    def L_sta(self) -> float:
        return math.fsum(self.segments)

    @property
    def n_contacts(self) -> int:
        return len(self.cp_stack) - 1


@dataclass(frozen=True)
class ContactWaypoint:
    position: tuple[float, float, float]
    tether: TetherState
    event: str = ""

    @property
    def contact(self) -> np.ndarray:
        return self.tether.top

    @property
    def n_contacts(self) -> int:
        return self.tether.n_contacts

    @property
    def L_eff(self) -> float:
        return float(np.linalg.norm(np.asarray(self.position) - self.tether.top))

    @property
    def total_length(self) -> float:
        return self.tether.L_sta + self.L_eff


def _pt(v) -> tuple[float, float, float]:
    return tuple(float(x) for x in v)  # type: ignore[return-value]


def contact_step(
    m: GridMap,
    prev: ContactWaypoint,
    wp: Sequence[float],
    max_push: int = 8,
) -> ContactWaypoint:
    """Advance the contact stack from waypoint ``prev`` to ``wp``.

    First try to relax the top contact (line of sight to the contact below
    it with nothing confined between them); otherwise push contacts while the
    top contact cannot see the waypoint.
    """
    wp = np.asarray(wp, dtype=float)
    stack = [np.asarray(p) for p in prev.tether.cp_stack]
    events = []
    if len(stack) >= 2:
        last, cur = stack[-2], stack[-1]
        if not segment_blocked(m, last, wp) and not obstacle_confined(cur, last, wp, m):
            stack.pop()
            events.append("pop")
    if not events:
        sweep_from = np.asarray(prev.position)
        while segment_blocked(m, stack[-1], wp):
            if len(events) == max_push:
                raise PlanningError(f"waypoint at {wp.tolist()}: no valid contact after {max_push} pushes")
            try:
                cp, graze = _wrap(stack[-1], sweep_from, wp, m)
            except (ValueError, PlanningError) as exc:
                raise PlanningError(f"waypoint at {wp.tolist()}: {exc}") from exc
            # the rest of the sweep pivots on the new contact
            sweep_from = graze if not segment_blocked(m, cp, graze) else cp + (cp - stack[-1]) * 1e-6
            stack.append(cp)
            events.append("push")
    return ContactWaypoint(_pt(wp), TetherState(tuple(_pt(p) for p in stack)), "+".join(events))


def first_contact_waypoint(m: GridMap, wp: Sequence[float], origin: Sequence[float] | None = None) -> ContactWaypoint:
    origin = np.asarray(m.tether_origin if origin is None else origin, dtype=float)
    wp = np.asarray(wp, dtype=float)
    if segment_blocked(m, origin, wp):
        raise PlanningError(f"first waypoint {wp.tolist()} is not visible from the tether origin")
    return ContactWaypoint(_pt(wp), TetherState((_pt(origin),)), "")


def plan_contact_points(
    m: GridMap,
    waypoints: Sequence[Sequence[float]],
    origin: Sequence[float] | None = None,
) -> list[ContactWaypoint]:
    """Contact planning with relaxation over world-space waypoints.

    Every output waypoint carries the contact stack in force when the UAV
    reaches it; its ``event`` records pushes and pops made on arrival.
    """
    if len(waypoints) == 0:
        return []
    out = [first_contact_waypoint(m, waypoints[0], origin)]
    for j in range(1, len(waypoints)):
        try:
            out.append(contact_step(m, out[-1], waypoints[j]))
        except PlanningError as exc:
            raise PlanningError(f"waypoint {j}: {exc}") from exc
    return out


def plan_contacts(m: GridMap, path: Sequence[Sequence[int]], origin: Sequence[float] | None = None) -> list[ContactWaypoint]:
    """Contact planning along a grid path; waypoints are the cell centers."""
    for s in path:
        if not m.is_free(s):
            raise ValidationError(f"path state {tuple(s)} is not free")
    return plan_contact_points(m, [m.center(s) for s in path], origin)


def tether_trace(m: GridMap, path: Sequence[Sequence[int]]) -> list[ContactWaypoint]:
    return plan_contacts(m, path)


def effective_polar(p: Sequence[float], t: TetherState) -> PolarCoord:
    """Commanded polar state: angles relative to the top contact, length L_eff + L_sta."""
    rel = np.asarray(p, dtype=float) - t.top
    if np.linalg.norm(rel) == 0:
        raise DomainError("position coincides with the top contact point")
    eff = cartesian_to_polar(rel)
    return PolarCoord(eff.L + t.L_sta, eff.theta, eff.phi)

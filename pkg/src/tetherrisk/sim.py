"""Kinematic execution of tethered waypoint plans.

The plant is first order: the commanded rates (dL, dtheta, dphi) integrate
straight into the polar state, which is always expressed relative to the
top contact of the active waypoint's tether stack.  The total length ``L``
includes the static length wrapped around earlier contacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import SingularityError, ValidationError
from .grid import GridMap
from .tether import (
    ContactWaypoint,
    PolarCoord,
    TetherState,
    cartesian_to_polar,
    effective_polar,
    plan_contact_points,
    polar_to_cartesian,
    wrap_angle,
)

CONTROLLERS = ("position", "velocity", "composite")


@dataclass(frozen=True)
class ControlCommand:
    dL: float
    dtheta: float
    dphi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dL, self.dtheta, self.dphi])


@dataclass(frozen=True)
class ControllerGains:
    kp: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kd: tuple[float, float, float] = (0.05, 0.05, 0.05)
    alpha: float = 0.5
    r_acc: float = 0.4

    def __post_init__(self):
        if min(self.kp) < 0 or min(self.kd) < 0:
            raise ValidationError("gains must be >= 0")
        if not self.alpha > 0 or not self.r_acc > 0:
            raise ValidationError("alpha and r_acc must be positive")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    max_steps: int = 2000
    noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    limits: tuple[float, float, float] = (2.0, 4.0, 8.0)
    theta_guard_deg: float = 80.0
    hysteresis_deg: float = 2.0
    kappa_max: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.theta_guard_deg < 90:
            raise ValidationError("theta_guard must be below 90 deg")
        if min(self.noise) < 0 or min(self.limits) <= 0:
            raise ValidationError("noise must be >= 0 and limits > 0")


def _clamp(u: np.ndarray, limits: Sequence[float] | None) -> ControlCommand:
    if limits is not None:
        lim = np.asarray(limits, dtype=float)
        u = np.clip(u, -lim, lim)
    return ControlCommand(float(u[0]), float(u[1]), float(u[2]))


def polar_error(desired: PolarCoord, sensed: PolarCoord) -> np.ndarray:
    return np.array([desired.L - sensed.L, desired.theta - sensed.theta, wrap_angle(desired.phi - sensed.phi)])


def position_step(
    sensed: PolarCoord,
    desired: PolarCoord,
    gains: ControllerGains,
    prev_error: Sequence[float] | None = None,
    dt: float = 0.05,
    limits: Sequence[float] | None = None,
) -> ControlCommand:
    """Three independent PD loops on (L, theta, phi)."""
    e = polar_error(desired, sensed)
    de = np.zeros(3) if prev_error is None else (e - np.asarray(prev_error, dtype=float)) / dt
    u = np.asarray(gains.kp) * e + np.asarray(gains.kd) * de
    return _clamp(u, limits)


def jacobian(p: PolarCoord) -> np.ndarray:
    """d(x, y, z) / d(L, theta, phi)."""
    L, th, ph = p.L, p.theta, p.phi
    ct, st, cp, sp = math.cos(th), math.sin(th), math.cos(ph), math.sin(ph)
    return np.array([
        [ct * sp, -L * st * sp, L * ct * cp],
        [st, L * ct, 0.0],
        [ct * cp, -L * st * cp, -L * ct * sp],
    ])


def velocity_step(
    current_xyz: Sequence[float],
    target_xyz: Sequence[float],
    p: PolarCoord,
    gains: ControllerGains,
    cfg: SimConfig = SimConfig(),
) -> ControlCommand:
    """Constant-speed straight-line velocity mapped through the inverse Jacobian.

    ``p`` is the polar state relative to the active contact (effective length).
    """
    if abs(p.theta) >= math.radians(cfg.theta_guard_deg):
        raise SingularityError(f"elevation {math.degrees(p.theta):.2f} deg beyond guard {cfg.theta_guard_deg} deg")
    J = jacobian(p)
    if np.linalg.cond(J) > cfg.kappa_max:
        raise SingularityError(f"Jacobian condition number {np.linalg.cond(J):.3g} above {cfg.kappa_max:.3g}")
    d = np.asarray(target_xyz, dtype=float) - np.asarray(current_xyz, dtype=float)
    n = np.linalg.norm(d)
    if n == 0:
        return ControlCommand(0.0, 0.0, 0.0)
    xdot = gains.alpha * d / n
    return _clamp(np.linalg.solve(J, xdot), cfg.limits)


# plans -------------------------------------------------------------------------

@dataclass
class Plan6D:
    """Waypoints with the contact stack the tether holds at each of them."""

    origin: tuple[float, float, float]
    waypoints: list[ContactWaypoint]

    @property
    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints], dtype=float)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], m: GridMap | None = None, origin: Sequence[float] | None = None) -> "Plan6D":
        """Plan contacts along ``points``; without a map the tether stays straight."""
        if m is None:
            o = tuple(float(v) for v in (origin if origin is not None else (0.0, 0.0, 0.0)))
            wps = [ContactWaypoint(tuple(float(v) for v in p), TetherState((o,))) for p in points]
            return cls(o, wps)
        wps = plan_contact_points(m, points, origin)
        o = tuple(float(v) for v in (m.tether_origin if origin is None else origin))
        return cls(o, wps)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "origin": list(self.origin),
            "waypoints": [
                {"position": list(w.position), "stack": [list(p) for p in w.tether.cp_stack], "event": w.event}
                for w in self.waypoints
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Plan6D":
        allowed = {"version", "origin", "waypoints"}
        if set(data) - allowed or data.get("version") != 1:
            raise ValidationError(f"plan6d document must be version 1 with fields {sorted(allowed)}")
        origin = tuple(float(v) for v in data["origin"])
        wps = []
        for i, w in enumerate(data["waypoints"]):
            if set(w) - {"position", "stack", "event"}:
                raise ValidationError(f"waypoint {i}: unknown fields {sorted(set(w) - {'position', 'stack', 'event'})}")
            stack = tuple(tuple(float(v) for v in p) for p in w.get("stack", [origin]))
            if stack[0] != origin:
                raise ValidationError(f"waypoint {i}: stack bottom must be the origin")
            wps.append(ContactWaypoint(tuple(float(v) for v in w["position"]), TetherState(stack), w.get("event", "")))
        return cls(origin, wps)


# execution ---------------------------------------------------------------------

@dataclass
class Trace:
    t: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    polar: list[tuple[float, float, float]] = field(default_factory=list)
    contacts: list[tuple[float, float, float]] = field(default_factory=list)
    static_length: list[float] = field(default_factory=list)
    contact_count: list[int] = field(default_factory=list)
    wp_index: list[int] = field(default_factory=list)
    controller: list[str] = field(default_factory=list)
    status: str = "running"
    reached: list[int] = field(default_factory=list)

    def record(self, t, p, polar, tether: TetherState, wp, mode):
        self.t.append(t)
        self.positions.append(np.array(p, dtype=float))
        self.polar.append(polar)
        self.contacts.append(tuple(float(v) for v in tether.top))
        self.static_length.append(tether.L_sta)
        self.contact_count.append(tether.n_contacts)
        self.wp_index.append(wp)
        self.controller.append(mode)

    @property
    def xyz(self) -> np.ndarray:
        return np.array(self.positions).reshape(-1, 3)

    def rows(self) -> list[dict]:
        return [
            {
                "t": t, "x": p[0], "y": p[1], "z": p[2], "L": pol[0], "theta": pol[1], "phi": pol[2],
                "contact_count": n, "wp_index": w,
            }
            for t, p, pol, n, w in zip(self.t, self.positions, self.polar, self.contact_count, self.wp_index)
        ]


def reconstruct(L: float, theta: float, phi: float, contact: Sequence[float], L_sta: float) -> np.ndarray:
    """World position from a polar state expressed in a contact frame."""
    return np.asarray(contact, dtype=float) + polar_to_cartesian(L - L_sta, theta, phi)


def _initial_polar(p: np.ndarray, tether, wps) -> np.ndarray:
    # a flight that starts on the tether station has L = 0; aim the angles at the next waypoint
    if np.linalg.norm(p - tether.top) > 0:
        return effective_polar(p, tether).as_array()
    for w in wps[1:]:
        rel = np.asarray(w.position, dtype=float) - tether.top
        if np.linalg.norm(rel) > 0:
            d = cartesian_to_polar(rel)
            return np.array([tether.L_sta, d.theta, d.phi])
    return np.array([tether.L_sta, 0.0, 0.0])


def execute_plan(
    plan: Plan6D,
    controller: str = "position",
    gains: ControllerGains = ControllerGains(),
    cfg: SimConfig = SimConfig(),
    m: GridMap | None = None,
    seed: int | None = 0,
) -> Trace:
    """Fly the plan from its first waypoint and record the trajectory.

    Outcomes other than completion (stuck, singularity_abort, collision) are
    reported through ``Trace.status``.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    rng = np.random.default_rng(seed)
    noise = np.asarray(cfg.noise, dtype=float)
    wps = plan.waypoints
    trace = Trace()
    if not wps:
        trace.status = "completed"
        return trace

    p = np.asarray(wps[0].position, dtype=float)
    target = 1
    tether = wps[min(target, len(wps) - 1)].tether
    state = _initial_polar(p, tether, wps)
    mode = "position" if controller == "position" else "velocity"
    guard = math.radians(cfg.theta_guard_deg)
    release = math.radians(cfg.theta_guard_deg - cfg.hysteresis_deg)
    prev_error = None
    steps_on_target = 0
    t = 0.0
    trace.reached.append(0)
    trace.record(t, p, tuple(state), tether, target, mode)

    while target < len(wps):
        wp = wps[target]
        if wp.tether != tether:
            # frame shift: re-express the same world position around the new top contact
            tether = wp.tether
            state = effective_polar(p, tether).as_array()
            prev_error = None

        sensed = state + rng.normal(0.0, 1.0, 3) * noise if noise.any() else state.copy()
        sensed_pos = reconstruct(*sensed, tether.top, tether.L_sta)
        if np.linalg.norm(sensed_pos - np.asarray(wp.position)) < gains.r_acc:
            trace.reached.append(target)
            target += 1
            steps_on_target = 0
            prev_error = None
            continue
        if steps_on_target >= cfg.max_steps:
            trace.status = "stuck"
            return trace

        theta_s = sensed[1]
        if controller == "composite":
            if mode == "velocity" and abs(theta_s) >= guard:
                mode = "position"
            elif mode == "position" and abs(theta_s) < release:
                mode = "velocity"

        desired = effective_polar(wp.position, tether)
        sensed_polar = PolarCoord(*sensed)
        if mode == "velocity":
            eff = PolarCoord(sensed[0] - tether.L_sta, sensed[1], sensed[2])
            try:
                u = velocity_step(sensed_pos, wp.position, eff, gains, cfg)
            except SingularityError:
                if controller == "velocity":
                    trace.status = "singularity_abort"
                    return trace
                mode = "position"
                u = position_step(sensed_polar, desired, gains, None, cfg.dt, cfg.limits)
            prev_error = None
        else:
            u = position_step(sensed_polar, desired, gains, prev_error, cfg.dt, cfg.limits)
            prev_error = polar_error(desired, sensed_polar)

        state = state + u.as_array() * cfg.dt
        state[0] = max(state[0], tether.L_sta + 1e-9)
        state[1] = min(max(state[1], -math.pi / 2), math.pi / 2)
        state[2] = wrap_angle(state[2])
        p = reconstruct(*state, tether.top, tether.L_sta)
        t += cfg.dt
        steps_on_target += 1
        trace.record(t, p, tuple(state), tether, target, mode)
        if m is not None and m.contains_point(p) and m.cell_of(p) in m.occupied:
            trace.status = "collision"
            return trace

    trace.status = "completed"
    return trace


# metrics ----------------------------------------------------------------------

@dataclass(frozen=True)
class CrossTrack:
    mean: float
    rms: float
    max: float


def distances_to_polyline(points: np.ndarray, path: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    path = np.asarray(path, dtype=float).reshape(-1, 3)
    if len(path) == 1:
        return np.linalg.norm(points - path[0], axis=1)
    a, b = path[:-1], path[1:]
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    rel = points[:, None, :] - a[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(dd > 0, np.einsum("pij,ij->pi", rel, d) / dd, 0.0)
    s = np.clip(s, 0.0, 1.0)
    closest = a[None, :, :] + s[:, :, None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2).min(axis=1)


def cross_track_error(trace: Trace | np.ndarray, plan: Plan6D | np.ndarray) -> CrossTrack:
    pts = trace.xyz if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    ideal = plan.positions if isinstance(plan, Plan6D) else np.asarray(plan, dtype=float)
    if len(pts) == 0:
        raise ValueError("empty trace")
    d = distances_to_polyline(pts, ideal)
    return CrossTrack(float(d.mean()), float(np.sqrt((d * d).mean())), float(d.max()))


def smoothness(trace: Trace | np.ndarray, window: int = 1) -> float:
    """Mean turning angle between successive displacements of the resampled trace."""
    if window < 1:
        raise ValueError("window must be >= 1")
    pts = trace.xyz if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    pts = pts[::window]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 resampled points, got {len(pts)}")
    v = np.diff(pts, axis=0)
    v = v[np.linalg.norm(v, axis=1) > 0]
    if len(v) < 2:
        raise ValueError("trace does not move")
    u = v / np.linalg.norm(v, axis=1)[:, None]
    cos = np.clip(np.einsum("ij,ij->i", u[:-1], u[1:]), -1.0, 1.0)
    return float(np.arccos(cos).mean())

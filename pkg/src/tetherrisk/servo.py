"""Rigid transforms and the desired-configuration solver for visual servoing.

Poses use yaw about y, pitch about x and roll about z, composed as
``R = Ry(yaw) @ Rx(pitch) @ Rz(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .tether import wrap_angle

ORTHO_TOL = 1e-9
AXES = ("x", "y", "z", "yaw", "pitch", "roll")


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class HomTransform:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValidationError(f"expected 3x3 rotation and 3-vector, got {R.shape} and {t.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValidationError("transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or np.linalg.det(R) < 0:
            raise ValidationError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "HomTransform":
        return cls()

    @classmethod
    def from_matrix(cls, g: np.ndarray) -> "HomTransform":
        g = np.asarray(g, dtype=float)
        if g.shape != (4, 4) or not np.allclose(g[3], [0, 0, 0, 1]):
            raise ValidationError("expected a 4x4 homogeneous matrix")
        return cls(g[:3, :3], g[:3, 3])

    def matrix(self) -> np.ndarray:
        g = np.eye(4)
        g[:3, :3] = self.R
        g[:3, 3] = self.t
        return g

    def __matmul__(self, other: "HomTransform") -> "HomTransform":
        return compose(self, other)

    def inverse(self) -> "HomTransform":
        return invert(self)

    def allclose(self, other: "HomTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0))


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def compose(a: HomTransform, b: HomTransform) -> HomTransform:
    # long chains accumulate rounding; snap back onto SO(3)
    return HomTransform(_reorthonormalize(a.R @ b.R), a.R @ b.t + a.t)


def invert(a: HomTransform) -> HomTransform:
    return HomTransform(a.R.T, -a.R.T @ a.t)


def desired_config(g_gf: HomTransform, g_ft: HomTransform, g_ft_star: HomTransform) -> HomTransform:
    """Vehicle pose at which the target would be seen as ``g_ft_star``."""
    return g_gf @ g_ft @ invert(g_ft_star)


@dataclass(frozen=True)
class ServoPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    gimbal_lock: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, wrap_angle(float(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.pitch, self.roll])

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "ServoPose":
        if len(v) != 6:
            raise ValidationError(f"pose needs 6 values, got {len(v)}")
        return cls(*(float(a) for a in v))

    def to_transform(self) -> HomTransform:
        R = rot_y(self.yaw) @ rot_x(self.pitch) @ rot_z(self.roll)
        return HomTransform(R, (self.x, self.y, self.z))

    @classmethod
    def from_transform(cls, g: HomTransform, lock_tol: float = 1e-9) -> "ServoPose":
        R = g.R
        sb = -R[1, 2]
        cb = math.hypot(R[1, 0], R[1, 1])
        if cb < lock_tol:
            # pitch at +-90 deg: yaw and roll share an axis, so roll is pinned to 0
            pitch = math.copysign(math.pi / 2, sb)
            yaw = math.atan2(R[0, 1], R[0, 0]) if sb > 0 else math.atan2(-R[0, 1], R[0, 0])
            return cls(*(float(v) for v in g.t), yaw, pitch, 0.0, gimbal_lock=True)
        pitch = math.atan2(sb, cb)
        yaw = math.atan2(R[0, 2], R[2, 2])
        roll = math.atan2(R[1, 0], R[1, 1])
        return cls(*(float(v) for v in g.t), yaw, pitch, roll)


def pose_error(desired: ServoPose, current: ServoPose) -> np.ndarray:
    e = desired.as_array() - current.as_array()
    e[3:] = [wrap_angle(a) for a in e[3:]]
    return e


@dataclass(frozen=True)
class ServoGains:
    kp: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 0.0)
    kd: tuple[float, ...] = (0.0,) * 6

    def __post_init__(self):
        if len(self.kp) != 6 or len(self.kd) != 6:
            raise ValidationError("servo gains need 6 entries per term")
        if min(self.kp) < 0 or min(self.kd) < 0:
            raise ValidationError("gains must be >= 0")


@dataclass(frozen=True)
class ServoCommand:
    rates: np.ndarray
    error: np.ndarray
    desired: ServoPose


def servo_step(
    current: ServoPose,
    g_ft: HomTransform,
    g_ft_star: HomTransform,
    gains: ServoGains = ServoGains(),
    prev_error: Sequence[float] | None = None,
    dt: float = 0.05,
) -> ServoCommand:
    """Per-axis PD toward the desired configuration; roll is never commanded."""
    desired = ServoPose.from_transform(desired_config(current.to_transform(), g_ft, g_ft_star))
    e = pose_error(desired, current)
    de = np.zeros(6) if prev_error is None else (e - np.asarray(prev_error, dtype=float)) / dt
    u = np.asarray(gains.kp) * e + np.asarray(gains.kd) * de
    u[5] = 0.0
    return ServoCommand(u, e, desired)


@dataclass
class ServoRun:
    t: np.ndarray
    actual: np.ndarray
    desired: np.ndarray
    commands: np.ndarray
    view_error: np.ndarray

    def error_stats(self) -> dict[str, dict[str, float]]:
        err = self.desired - self.actual
        err[:, 3:] = (err[:, 3:] + math.pi) % (2 * math.pi) - math.pi
        out = {}
        for i, name in enumerate(AXES):
            e = err[:, i]
            out[name] = {
                "mean": float(e.mean()),
                "rms": float(np.sqrt((e * e).mean())),
                "max": float(np.abs(e).max()),
                "sd": float(e.std()),
            }
        return out


def simulate_servo(
    target_poses: Sequence[ServoPose],
    g_ft_star: HomTransform,
    start: ServoPose | None = None,
    gains: ServoGains = ServoGains(),
    dt: float = 0.05,
    exact: bool = False,
) -> ServoRun:
    """Chase a scripted target trajectory given as ground-frame poses.

    With ``exact`` the vehicle jumps straight to each desired configuration,
    otherwise the PD rates are integrated per axis.
    """
    if not target_poses:
        raise ValueError("empty target trajectory")
    if start is None:
        start = ServoPose.from_transform(target_poses[0].to_transform() @ invert(g_ft_star))
    cur = start
    prev = None
    ts, act, des, cmds, view = [], [], [], [], []
    for k, tp in enumerate(target_poses):
        g_gt = tp.to_transform()
        g_gf = cur.to_transform()
        g_ft = invert(g_gf) @ g_gt
        cmd = servo_step(cur, g_ft, g_ft_star, gains, prev, dt)
        prev = cmd.error
        if exact:
            cur = cmd.desired
        else:
            cur = ServoPose.from_array(cur.as_array() + cmd.rates * dt)
        observed = invert(cur.to_transform()) @ g_gt
        ts.append(k * dt)
        act.append(cur.as_array())
        des.append(cmd.desired.as_array())
        cmds.append(cmd.rates)
        view.append(max(np.abs(observed.R - g_ft_star.R).max(), np.abs(observed.t - g_ft_star.t).max()))
    return ServoRun(np.array(ts), np.array(act), np.array(des), np.array(cmds), np.array(view))

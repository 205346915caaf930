"""Per-element motion risk and its aggregation into a path risk index.

Every element maps to a probability ``r_k`` of not finishing at a state.
A state's finish probability is the product of ``1 - r_k`` over its enabled
elements, and the path risk is one minus the product over all states.  The
products are accumulated as sums of ``log1p(-r_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .grid import Cell, GraphConfig, GridMap, plane_axes, ray_length

LOCALE = ("distance", "visibility", "scale", "singularity")
ACTION = ("action_length", "turn")
TRAVERSE = ("tether_length", "contacts")
ELEMENTS = LOCALE + ACTION + TRAVERSE

# the six elements used throughout the comparison experiments
DEFAULT_ELEMENTS = ("distance", "visibility", "action_length", "turn", "tether_length", "contacts")


@dataclass(frozen=True)
class RiskConfig:
    enabled: tuple[str, ...] = DEFAULT_ELEMENTS
    p_floor: float = 0.0
    p_cap: float = 0.99
    # distance: linear from r_max_dist at d_min down to p_floor at d_safe
    d_min: float = 0.0
    d_safe: float = 2.0
    r_max_dist: float = 0.08
    # visibility: linear from r_max_vis at V = 0 down to p_floor at V_safe
    n_rays: int = 8
    v_safe: float = 4.0
    r_max_vis: float = 0.04
    # scale of characteristic dimension
    a_cd: float = 0.5
    p_scale_high: float = 0.05
    p_scale_medium: float = 0.02
    # motion singularity above the reel
    sing_band_deg: float = 10.0
    r_max_sing: float = 0.05
    action_coef: float = 0.01
    turn_coef: float = 0.04 / math.sqrt(2)
    tether_coef: float = 0.005
    p_contact: float = 0.03

    def __post_init__(self):
        enabled = tuple(self.enabled)
        unknown = set(enabled) - set(ELEMENTS)
        if unknown:
            raise ValidationError(f"unknown risk elements: {sorted(unknown)}")
        # canonical order keeps breakdown tables stable
        object.__setattr__(self, "enabled", tuple(e for e in ELEMENTS if e in enabled))
        if not (0 <= self.p_floor <= self.p_cap < 1):
            raise ValidationError(f"need 0 <= p_floor <= p_cap < 1, got [{self.p_floor}, {self.p_cap}]")
        for name in ("r_max_dist", "r_max_vis", "p_scale_high", "p_scale_medium", "r_max_sing", "p_contact"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must be a probability")
        for name in ("action_coef", "turn_coef", "tether_coef", "d_min", "a_cd"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.d_safe <= self.d_min:
            raise ValidationError("d_safe must exceed d_min")
        if self.v_safe <= 0 or self.a_cd <= 0:
            raise ValidationError("v_safe and a_cd must be positive")
        if self.n_rays < 4 or self.n_rays % 2:
            raise ValidationError(f"n_rays must be even and >= 4, got {self.n_rays}")
        if not 0 < self.sing_band_deg <= 90:
            raise ValidationError("sing_band_deg must be in (0, 90]")

    def clamp(self, p: float) -> float:
        return min(max(p, 0.0), self.p_cap)

    def uses(self, group: Sequence[str]) -> bool:
        return any(e in self.enabled for e in group)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RiskConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown risk config fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "enabled" in kwargs:
            kwargs["enabled"] = tuple(kwargs["enabled"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["enabled"] = list(self.enabled)
        return out


def _ramp(x: float, x_hi: float, x_lo: float) -> float:
    """1 at x <= x_lo, 0 at x >= x_hi, linear between."""
    if x >= x_hi:
        return 0.0
    if x <= x_lo:
        return 1.0
    return (x_hi - x) / (x_hi - x_lo)


def _require_free(m: GridMap, s: Sequence[int]) -> None:
    if not m.is_free(s):
        raise ValueError(f"state {tuple(s)} is occupied or out of bounds")


# locale elements ---------------------------------------------------------

def distance_to_obstacle(m: GridMap, s: Sequence[int]) -> float:
    _require_free(m, s)
    return float(m.clearance[tuple(s)])


def distance_risk(m: GridMap, s: Sequence[int], cfg: RiskConfig) -> float:
    d = distance_to_obstacle(m, s)
    w = _ramp(d, cfg.d_safe, cfg.d_min)
    return cfg.clamp(cfg.p_floor + (cfg.r_max_dist - cfg.p_floor) * w)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    y = 1 - 2 * i / n
    r = np.sqrt(1 - y * y)
    phi = math.pi * (3 - math.sqrt(5)) * i
    return np.column_stack([r * np.cos(phi), y, r * np.sin(phi)])


def ray_directions(dims: Sequence[int], n_rays: int) -> np.ndarray:
    """Isovist ray directions; ray ``i + n/2`` always opposes ray ``i``."""
    if n_rays < 4 or n_rays % 2:
        raise ValueError(f"n_rays must be even and >= 4, got {n_rays}")
    if 1 in dims:
        a, b = plane_axes(dims)
        ang = 2 * math.pi * np.arange(n_rays) / n_rays
        dirs = np.zeros((n_rays, 3))
        dirs[:, a] = np.cos(ang)
        dirs[:, b] = np.sin(ang)
        dirs[np.abs(dirs) < 1e-15] = 0.0
        return dirs
    half = fibonacci_sphere(n_rays // 2)
    return np.vstack([half, -half])


def isovist(m: GridMap, s: Sequence[int], n_rays: int) -> np.ndarray:
    """Lengths of the isovist rays from the center of ``s``; the boundary stops rays."""
    _require_free(m, s)
    p = m.center(s)
    return np.array([ray_length(m, p, d) for d in ray_directions(m.dims, n_rays)])


def visibility(m: GridMap, s: Sequence[int], n_rays: int) -> float:
    return float(isovist(m, s, n_rays).mean())


def visibility_risk(v: float, cfg: RiskConfig) -> float:
    if v < 0:
        raise ValueError("visibility must be >= 0")
    w = _ramp(v, cfg.v_safe, 0.0)
    return cfg.clamp(cfg.p_floor + (cfg.r_max_vis - cfg.p_floor) * w)


def characteristic_dimension(m: GridMap, s: Sequence[int], n_rays: int) -> float:
    """E_cd: narrowest opposing-ray clearance through the state."""
    lengths = isovist(m, s, n_rays)
    half = n_rays // 2
    return float(np.min(lengths[:half] + lengths[half:]))


def scale_risk(m: GridMap, s: Sequence[int], cfg: RiskConfig) -> float:
    ratio = characteristic_dimension(m, s, cfg.n_rays) / cfg.a_cd
    if ratio <= 1.0:
        return cfg.clamp(cfg.p_scale_high)
    if ratio <= 2.0:
        return cfg.clamp(cfg.p_scale_medium)
    return cfg.p_floor


def elevation(p: Sequence[float], origin: Sequence[float]) -> float:
    """Elevation angle of ``p`` seen from ``origin`` (y is up)."""
    d = np.asarray(p, dtype=float) - np.asarray(origin, dtype=float)
    horiz = math.hypot(d[0], d[2])
    if horiz == 0 and d[1] == 0:
        return 0.0
    return math.atan2(d[1], horiz)


def singularity_risk_at(theta: float, cfg: RiskConfig) -> float:
    deg = math.degrees(theta)
    w = min(max((deg - (90.0 - cfg.sing_band_deg)) / cfg.sing_band_deg, 0.0), 1.0)
    return cfg.clamp(cfg.p_floor + (cfg.r_max_sing - cfg.p_floor) * w)


def singularity_risk(m: GridMap, s: Sequence[int], cfg: RiskConfig, origin: Sequence[float] | None = None) -> float:
    _require_free(m, s)
    origin = m.tether_origin if origin is None else origin
    return singularity_risk_at(elevation(m.center(s), origin), cfg)


# action and traverse elements --------------------------------------------

def action_length_risk(s_prev: Sequence[int] | None, s_cur: Sequence[int], cfg: RiskConfig) -> float:
    if s_prev is None:
        return 0.0
    return cfg.clamp(cfg.action_coef * math.dist(s_cur, s_prev))


def turn_risk(s_a: Sequence[int] | None, s_b: Sequence[int] | None, s_c: Sequence[int], cfg: RiskConfig) -> float:
    if s_a is None or s_b is None:
        return 0.0
    change = [c - 2 * b + a for a, b, c in zip(s_a, s_b, s_c)]
    return cfg.clamp(cfg.turn_coef * math.hypot(*change))


def tether_length_risk(total_length: float, cfg: RiskConfig) -> float:
    if total_length < 0:
        raise ValueError("tether length must be >= 0")
    return cfg.clamp(cfg.tether_coef * total_length)


def contact_count_risk(n_contacts: int, cfg: RiskConfig) -> float:
    if n_contacts < 0:
        raise ValueError("contact count must be >= 0")
    return cfg.clamp(1.0 - (1.0 - cfg.p_contact) ** n_contacts)


# aggregation ---------------------------------------------------------------

@dataclass
class RiskBreakdown:
    path: list[Cell]
    elements: list[dict[str, float]]
    finish: np.ndarray = field(repr=False)
    cumulative: np.ndarray = field(repr=False)
    risk: float = 0.0

    def as_rows(self) -> list[dict]:
        rows = []
        for i, (s, el) in enumerate(zip(self.path, self.elements)):
            rows.append({
                "index": i,
                "state": list(s),
                "elements": dict(el),
                "finish": float(self.finish[i]),
                "cumulative": float(self.cumulative[i]),
            })
        return rows


def aggregate(path: Sequence[Sequence[int]], table: Sequence[Mapping[str, float]], cfg: RiskConfig | None = None) -> RiskBreakdown:
    """Combine a per-state element table into a RiskBreakdown."""
    if len(path) != len(table):
        raise ValidationError(f"element table has {len(table)} rows for a {len(path)}-state path")
    cap = cfg.p_cap if cfg is not None else 1.0 - 1e-12
    logs = []
    rows = []
    for el in table:
        row = {}
        for k, r in el.items():
            r = float(r)
            if not 0 <= r <= 1:
                raise ValidationError(f"element {k} probability {r} outside [0, 1]")
            row[k] = min(r, cap)
        rows.append(row)
        logs.append(math.fsum(math.log1p(-r) for r in row.values()))
    logs = np.array(logs, dtype=float)
    cum = np.cumsum(logs)
    finish = np.exp(logs)
    cumulative = np.exp(cum)
    risk = float(-math.expm1(cum[-1])) if len(cum) else 0.0
    return RiskBreakdown([tuple(int(v) for v in s) for s in path], rows, finish, cumulative, risk)


def default_graph(m: GridMap) -> GraphConfig:
    return GraphConfig(8) if 1 in m.dims else GraphConfig(26)


def check_path(m: GridMap, path: Sequence[Sequence[int]], gcfg: GraphConfig | None = None) -> list[Cell]:
    if len(path) == 0:
        raise ValidationError("empty path")
    gcfg = gcfg or default_graph(m)
    cells = [tuple(int(v) for v in s) for s in path]
    for s in cells:
        if not m.is_free(s):
            raise ValidationError(f"path state {s} is occupied or out of bounds")
    for a, b in zip(cells, cells[1:]):
        gap = math.dist(a, b)
        if gap > gcfg.r_c + 1e-12 or gap == 0:
            raise ValidationError(f"infeasible step {a} -> {b} (gap {gap:.3f}, r_c {gcfg.r_c:.3f})")
    return cells  # type: ignore[return-value]


class RiskEvaluator:
    """Path risk evaluation with per-cell caching of locale elements.

    Planners call :meth:`log_survival` many times on paths sharing the same
    map and config, so locale elements are computed once per cell.
    """

    def __init__(self, m: GridMap, cfg: RiskConfig):
        self.map = m
        self.cfg = cfg
        self._locale: dict[Cell, dict[str, float]] = {}
        self._logs: dict[tuple, float] = {}
        self._traverse = cfg.uses(TRAVERSE)
        self.evaluations = 0

    def locale(self, s: Cell) -> dict[str, float]:
        hit = self._locale.get(s)
        if hit is not None:
            return hit
        m, cfg = self.map, self.cfg
        out = {}
        if "distance" in cfg.enabled:
            out["distance"] = distance_risk(m, s, cfg)
        if "visibility" in cfg.enabled:
            out["visibility"] = visibility_risk(visibility(m, s, cfg.n_rays), cfg)
        if "scale" in cfg.enabled:
            out["scale"] = scale_risk(m, s, cfg)
        if "singularity" in cfg.enabled:
            out["singularity"] = singularity_risk(m, s, cfg)
        self._locale[s] = out
        return out

    def row(self, path: Sequence[Cell], tether=None) -> dict[str, float]:
        """Element risks at the last state of ``path`` given its prefix.

        ``tether`` is the contact waypoint at that state (needed only when
        traverse elements are enabled).
        """
        cfg = self.cfg
        s = path[-1]
        n = len(path)
        row = dict(self.locale(s))
        prev = path[-2] if n >= 2 else None
        prev2 = path[-3] if n >= 3 else None
        if "action_length" in cfg.enabled:
            row["action_length"] = action_length_risk(prev, s, cfg)
        if "turn" in cfg.enabled:
            row["turn"] = turn_risk(prev2, prev, s, cfg)
        if "tether_length" in cfg.enabled:
            row["tether_length"] = tether_length_risk(tether.total_length, cfg)
        if "contacts" in cfg.enabled:
            row["contacts"] = contact_count_risk(tether.n_contacts, cfg)
        return row

    def next_tether(self, path: Sequence[Cell], prev_tether=None):
        """Contact waypoint at the last state of ``path``, or None when not needed."""
        if not self.cfg.uses(TRAVERSE):
            return None
        from .tether import contact_step, first_contact_waypoint

        point = self.map.center(path[-1])
        if prev_tether is None:
            return first_contact_waypoint(self.map, point)
        return contact_step(self.map, prev_tether, point)

    def step(self, path: Sequence[Cell], prev_tether=None) -> tuple[float, object]:
        """log(P(F_i)) at the last state of ``path`` and the tether state there.

        Same values as :meth:`row`, but locale terms are cached per cell and
        action terms per move pair, which keeps exhaustive search affordable.
        """
        self.evaluations += 1
        cfg = self.cfg
        tether = self.next_tether(path, prev_tether) if self._traverse else None
        logs = self._logs
        s = path[-1]
        total = logs.get(s)
        if total is None:
            total = self._cached(s, lambda: self.locale(s).values())
        if len(path) >= 2:
            p1 = path[-2]
            move = (s[0] - p1[0], s[1] - p1[1], s[2] - p1[2])
            if len(path) >= 3:
                p2 = path[-3]
                key = ((p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]), move)
            else:
                key = (None, move)
            term = logs.get(key)
            if term is None:
                term = self._cached(key, lambda: self._action_risks(*key))
            total += term
        if tether is not None:
            if "tether_length" in cfg.enabled:
                total += math.log1p(-tether_length_risk(tether.total_length, cfg))
            if "contacts" in cfg.enabled:
                total += math.log1p(-contact_count_risk(tether.n_contacts, cfg))
        return total, tether

    def _action_risks(self, before, move) -> list[float]:
        cfg = self.cfg
        out = []
        if "action_length" in cfg.enabled:
            out.append(action_length_risk((0, 0, 0), move, cfg))
        if before is not None and "turn" in cfg.enabled:
            out.append(turn_risk((0, 0, 0), before, tuple(b + d for b, d in zip(before, move)), cfg))
        return out

    def _cached(self, key, risks) -> float:
        hit = self._logs.get(key)
        if hit is None:
            hit = self._logs[key] = math.fsum(math.log1p(-r) for r in risks())
        return hit

    def tether_trace(self, path: Sequence[Cell]):
        trace, tether = [], None
        for i in range(len(path)):
            tether = self.next_tether(path[: i + 1], tether)
            trace.append(tether)
        return trace

    def table(self, path: Sequence[Cell], trace=None) -> list[dict[str, float]]:
        if trace is None and self.cfg.uses(TRAVERSE):
            trace = self.tether_trace(path)
        if trace is not None and len(trace) != len(path):
            raise ValidationError("tether trace not aligned with path")
        return [self.row(path[: i + 1], trace[i] if trace is not None else None) for i in range(len(path))]

    def log_survival(self, path: Sequence[Cell]) -> float:
        """Sum of log(1 - r_k) over the path; the planners' working quantity."""
        self.evaluations += 1
        return math.fsum(math.log1p(-r) for row in self.table(path) for r in row.values())

    def risk(self, path: Sequence[Cell]) -> float:
        return -math.expm1(self.log_survival(path))

    def breakdown(self, path: Sequence[Cell], trace=None) -> RiskBreakdown:
        return aggregate(path, self.table(path, trace), self.cfg)


def path_risk(
    m: GridMap,
    path: Sequence[Sequence[int]],
    cfg: RiskConfig,
    tether_trace=None,
    gcfg: GraphConfig | None = None,
    element_table: Sequence[Mapping[str, float]] | None = None,
) -> RiskBreakdown:
    """Risk breakdown of ``path``.

    ``element_table`` supplies measured per-state element values directly
    (one mapping per state) instead of computing them from the map.
    """
    cells = check_path(m, path, gcfg)
    if element_table is not None:
        return aggregate(cells, element_table, cfg)
    return RiskEvaluator(m, cfg).breakdown(cells, tether_trace)

"""Occupancy-grid world model.

Cells are indexed ``(i, j, k)`` and map to world points in meters with the
cell center at ``(idx + 0.5) * resolution``.  The world frame is y-up, which
is the frame used by the tether polar coordinates.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import ValidationError

Cell = tuple[int, int, int]

MAP_VERSION = 1
_MAP_REQUIRED = {"version", "resolution_m", "dims", "start"}
_MAP_OPTIONAL = {"occupied", "rewards", "tether_origin_m", "poi"}

# Shrink applied to occupied boxes so that a segment grazing a face, edge or
# corner does not count as a collision.
_GRAZE = 1e-9


def _as_cell(value: Iterable) -> Cell:
    cell = tuple(int(v) for v in value)
    if len(cell) != 3:
        raise ValidationError(f"cell must have 3 indices, got {list(value)!r}")
    return cell  # type: ignore[return-value]


@dataclass(frozen=True)
class GridMap:
    dims: Cell
    resolution: float
    occupied: frozenset = frozenset()
    rewards: Mapping[Cell, float] = field(default_factory=dict, hash=False)
    start: Cell = (0, 0, 0)
    tether_origin: tuple[float, float, float] | None = None
    poi: tuple[Cell, ...] = ()

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "dims", _as_cell(self.dims))
        set_(self, "occupied", frozenset(_as_cell(c) for c in self.occupied))
        set_(self, "start", _as_cell(self.start))
        set_(self, "rewards", {_as_cell(c): float(v) for c, v in dict(self.rewards).items()})
        set_(self, "poi", tuple(_as_cell(c) for c in self.poi))
        set_(self, "resolution", float(self.resolution))

        if any(n <= 0 for n in self.dims):
            raise ValidationError(f"dims must be positive, got {self.dims}")
        if not self.resolution > 0 or not math.isfinite(self.resolution):
            raise ValidationError(f"resolution must be positive, got {self.resolution}")
        for c in self.occupied:
            if not self.in_bounds(c):
                raise ValidationError(f"occupied cell {c} outside dims {self.dims}")
        if not self.in_bounds(self.start):
            raise ValidationError(f"start {self.start} outside dims {self.dims}")
        if self.start in self.occupied:
            raise ValidationError(f"start {self.start} is occupied")
        for c, v in self.rewards.items():
            if not self.in_bounds(c) or c in self.occupied:
                raise ValidationError(f"reward on non-free cell {c}")
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"reward at {c} must be finite and >= 0, got {v}")
        for c in self.poi:
            if not self.in_bounds(c):
                raise ValidationError(f"poi {c} outside dims {self.dims}")

        if self.tether_origin is None:
            origin = tuple(float(x) for x in self.center(self.start))
        else:
            origin = tuple(float(x) for x in self.tether_origin)
            if len(origin) != 3:
                raise ValidationError("tether_origin must be a 3-vector")
            if not self.contains_point(origin):
                raise ValidationError(f"tether origin {origin} outside the map")
        set_(self, "tether_origin", origin)

    # geometry -----------------------------------------------------------

    @property
    def extent(self) -> np.ndarray:
        """World-space size of the map in meters."""
        return np.asarray(self.dims, dtype=float) * self.resolution

    def in_bounds(self, cell: Sequence[int]) -> bool:
        return all(0 <= c < n for c, n in zip(cell, self.dims))

    def is_free(self, cell: Sequence[int]) -> bool:
        return self.in_bounds(cell) and tuple(cell) not in self.occupied

    def contains_point(self, p: Sequence[float], tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= -tol) and np.all(p <= self.extent + tol))

    def center(self, cell: Sequence[int]) -> np.ndarray:
        return (np.asarray(cell, dtype=float) + 0.5) * self.resolution

    def cell_of(self, p: Sequence[float]) -> Cell:
        idx = np.floor(np.asarray(p, dtype=float) / self.resolution).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        return tuple(int(i) for i in idx)  # type: ignore[return-value]

    @cached_property
    def occupancy(self) -> np.ndarray:
        grid = np.zeros(self.dims, dtype=bool)
        if self.occupied:
            idx = np.array(sorted(self.occupied))
            grid[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return grid

    @cached_property
    def occupied_array(self) -> np.ndarray:
        if not self.occupied:
            return np.zeros((0, 3), dtype=int)
        return np.array(sorted(self.occupied), dtype=int)

    @cached_property
    def free_cells(self) -> tuple[Cell, ...]:
        return tuple(c for c in itertools.product(*map(range, self.dims)) if c not in self.occupied)

    @cached_property
    def clearance(self) -> np.ndarray:
        """Distance in meters from every cell center to the nearest occupied center."""
        if not self.occupied:
            return np.full(self.dims, np.inf)
        return ndimage.distance_transform_edt(~self.occupancy, sampling=self.resolution)

    def with_occupied(self, cells: Iterable[Sequence[int]]) -> "GridMap":
        """Copy of this map with ``cells`` as the occupied set.

        Rewards that end up on occupied cells are dropped.
        """
        occ = frozenset(_as_cell(c) for c in cells)
        rewards = {c: v for c, v in self.rewards.items() if c not in occ}
        return GridMap(self.dims, self.resolution, occ, rewards, self.start, self.tether_origin, self.poi)


@dataclass(frozen=True)
class GraphConfig:
    connectivity: int = 8
    r_c: float | None = None

    def __post_init__(self):
        if self.connectivity not in (4, 8, 6, 26):
            raise ValidationError(f"connectivity must be one of 4, 8, 6, 26, got {self.connectivity}")
        if self.r_c is None:
            default = {4: 1.0, 6: 1.0, 8: math.sqrt(2), 26: math.sqrt(3)}[self.connectivity]
            object.__setattr__(self, "r_c", default)
        if not self.r_c >= 1:
            raise ValidationError(f"r_c must be >= 1, got {self.r_c}")


def plane_axes(dims: Sequence[int]) -> tuple[int, int]:
    """Axes spanned by a planar map (the last singleton axis is dropped)."""
    for flat in (2, 1, 0):
        if dims[flat] == 1:
            return tuple(a for a in range(3) if a != flat)  # type: ignore[return-value]
    raise ValidationError(f"2D connectivity needs a map with a singleton axis, got dims {tuple(dims)}")


def neighbor_offsets(dims: Sequence[int], cfg: GraphConfig) -> list[Cell]:
    if cfg.connectivity in (4, 8):
        a, b = plane_axes(dims)
        offsets = []
        for da, db in itertools.product((-1, 0, 1), repeat=2):
            if (da, db) == (0, 0) or (cfg.connectivity == 4 and da and db):
                continue
            off = [0, 0, 0]
            off[a], off[b] = da, db
            offsets.append(tuple(off))
    else:
        offsets = [
            d for d in itertools.product((-1, 0, 1), repeat=3)
            if any(d) and (cfg.connectivity == 26 or sum(map(abs, d)) == 1)
        ]
    return sorted(d for d in offsets if math.sqrt(sum(x * x for x in d)) <= cfg.r_c + 1e-12)


def neighbors(m: GridMap, s: Sequence[int], cfg: GraphConfig) -> list[Cell]:
    s = _as_cell(s)
    if not m.is_free(s):
        raise ValueError(f"state {s} is occupied or out of bounds")
    out = []
    for d in neighbor_offsets(m.dims, cfg):
        t = (s[0] + d[0], s[1] + d[1], s[2] + d[2])
        if m.is_free(t):
            out.append(t)
    return out


def inflate(m: GridMap, radius: int) -> GridMap:
    """Occupy every cell within Chebyshev distance ``radius`` of an obstacle."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0 or not m.occupied:
        return m
    box = np.ones((2 * radius + 1,) * 3, dtype=bool)
    grown = ndimage.binary_dilation(m.occupancy, structure=box)
    cells = [tuple(int(v) for v in c) for c in np.argwhere(grown)]
    if m.start in set(cells):
        raise ValidationError(f"inflation by {radius} swallows start {m.start}")
    return m.with_occupied(cells)


def _check_point(m: GridMap, p: np.ndarray) -> None:
    if not m.contains_point(p):
        raise ValueError(f"point {p.tolist()} outside the map bounds")


def segment_hits(m: GridMap, a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Boolean mask over ``m.occupied_array`` of boxes the segment a-b passes through.

    Slab test against every occupied box, each shrunk by a tiny margin so that
    grazing contact along faces, edges or corners is not a hit.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    boxes = m.occupied_array
    if len(boxes) == 0:
        return np.zeros(0, dtype=bool)
    eps = _GRAZE * m.resolution
    lo = boxes * m.resolution + eps
    hi = (boxes + 1) * m.resolution - eps
    d = b - a
    t0 = np.zeros(len(boxes))
    t1 = np.ones(len(boxes))
    hit = np.ones(len(boxes), dtype=bool)
    for ax in range(3):
        if abs(d[ax]) < 1e-15:
            hit &= (a[ax] > lo[:, ax]) & (a[ax] < hi[:, ax])
            continue
        ta = (lo[:, ax] - a[ax]) / d[ax]
        tb = (hi[:, ax] - a[ax]) / d[ax]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return hit & (t0 < t1)


def segment_blocked(m: GridMap, a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff the segment a-b passes through the interior of an occupied cell."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_point(m, a)
    _check_point(m, b)
    return bool(segment_hits(m, a, b).any())


def ray_length(m: GridMap, p: Sequence[float], direction: Sequence[float], boundary: bool = True) -> float:
    """Distance from ``p`` along ``direction`` to the first occupied cell.

    Exact voxel walk.  The map boundary stops the ray when ``boundary`` is
    true; otherwise a ray that leaves the map returns ``inf``.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("zero ray direction")
    d = d / norm
    res = m.resolution
    cell = np.array(m.cell_of(p))
    dims = np.asarray(m.dims)
    if m.occupancy[tuple(cell)]:
        return 0.0

    step = np.sign(d).astype(int)
    with np.errstate(divide="ignore"):
        inv = np.where(d != 0, 1.0 / np.abs(d), np.inf)
    next_bound = np.where(step > 0, (cell + 1) * res, cell * res)
    t_max = np.where(d != 0, np.abs(next_bound - p) * inv, np.inf)
    t_delta = res * inv

    while True:
        ax = int(np.argmin(t_max))
        t = float(t_max[ax])
        cell[ax] += step[ax]
        if cell[ax] < 0 or cell[ax] >= dims[ax]:
            return t if boundary else math.inf
        if m.occupancy[tuple(cell)]:
            return t
        t_max[ax] += t_delta[ax]


# file I/O ---------------------------------------------------------------

def map_to_dict(m: GridMap) -> dict:
    out = {
        "version": MAP_VERSION,
        "resolution_m": m.resolution,
        "dims": list(m.dims),
        "start": list(m.start),
        "tether_origin_m": list(m.tether_origin),
        "occupied": [list(c) for c in sorted(m.occupied)],
        "rewards": [{"cell": list(c), "value": v} for c, v in sorted(m.rewards.items())],
    }
    if m.poi:
        out["poi"] = [list(c) for c in m.poi]
    return out


def map_from_dict(data: Mapping) -> GridMap:
    if not isinstance(data, Mapping):
        raise ValidationError("map document must be an object")
    keys = set(data)
    unknown = keys - _MAP_REQUIRED - _MAP_OPTIONAL
    if unknown:
        raise ValidationError(f"unknown map fields: {sorted(unknown)}")
    missing = _MAP_REQUIRED - keys
    if missing:
        raise ValidationError(f"missing map fields: {sorted(missing)}")
    if data["version"] != MAP_VERSION:
        raise ValidationError(f"unsupported map version {data['version']!r}")
    try:
        rewards = {}
        for entry in data.get("rewards", []):
            if set(entry) != {"cell", "value"}:
                raise ValidationError(f"reward entries need exactly cell and value, got {sorted(entry)}")
            rewards[_as_cell(entry["cell"])] = float(entry["value"])
        return GridMap(
            dims=_as_cell(data["dims"]),
            resolution=float(data["resolution_m"]),
            occupied=frozenset(_as_cell(c) for c in data.get("occupied", [])),
            rewards=rewards,
            start=_as_cell(data["start"]),
            tether_origin=data.get("tether_origin_m"),
            poi=tuple(_as_cell(c) for c in data.get("poi", [])),
        )
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"malformed map document: {exc}") from exc


def dumps_lines(data: Mapping) -> str:
    """JSON with one top-level key per line and one list item per line.

    Keeps map and path files diff-friendly while staying plain JSON.
    """
    lines = ["{"]
    items = sorted(data.items())
    for n, (key, value) in enumerate(items):
        tail = "," if n < len(items) - 1 else ""
        if isinstance(value, list) and value and isinstance(value[0], (list, dict)):
            lines.append(f"  {json.dumps(key)}: [")
            for m_, item in enumerate(value):
                sep = "," if m_ < len(value) - 1 else ""
                lines.append(f"    {json.dumps(item, sort_keys=True)}{sep}")
            lines.append(f"  ]{tail}")
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(value, sort_keys=True)}{tail}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: parse error: {exc}") from exc


def load_map(path: str | Path) -> GridMap:
    try:
        return map_from_dict(read_json(path))
    except ValidationError as exc:
        if str(path) in str(exc):
            raise
        raise ValidationError(f"{path}: {exc}") from exc


def save_map(m: GridMap, path: str | Path) -> None:
    Path(path).write_text(dumps_lines(map_to_dict(m)))

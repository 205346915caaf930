"""Shared builders for the test suites."""

import math
from pathlib import Path

import numpy as np

from tetherrisk.grid import GridMap

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def planar(w: int, h: int, occupied=(), start=(0, 0), **kw) -> GridMap:
    return GridMap(
        (w, h, 1), 1.0, frozenset((x, y, 0) for x, y in occupied), start=(start[0], start[1], 0), **kw
    )


def random_grid(rng: np.random.Generator, w: int = 4, h: int = 4, density: float = 0.2) -> GridMap:
    """Planar grid with roughly ``density`` obstacles; start stays free."""
    occ = [(x, y) for x in range(w) for y in range(h) if (x, y) != (0, 0) and rng.random() < density]
    return planar(w, h, occ)


def l_plan(seed: int, leg: float = 3.0) -> list[tuple[float, float, float]]:
    """Sparse L with 3 m legs flown 0.5-1.5 m above the reel.

    The corner sits 1-2.5 m out horizontally and both legs keep at least 1 m
    of horizontal clearance from the reel axis.
    """
    r = np.random.default_rng(seed)
    while True:
        a = r.uniform(0, 2 * math.pi)
        h = r.uniform(0.5, 1.5)
        d = r.uniform(1.0, 2.5)
        corner = np.array([d * math.sin(a), h, d * math.cos(a)])
        b = r.uniform(0, 2 * math.pi)
        u = np.array([math.sin(b), 0.0, math.cos(b)])
        w = np.cross([0.0, 1.0, 0.0], u) * r.choice([-1, 1])
        pts = [corner - leg * u, corner, corner + leg * w]
        dense = np.concatenate([np.linspace(pts[0], pts[1], 50), np.linspace(pts[1], pts[2], 50)])
        if np.hypot(dense[:, 0], dense[:, 2]).min() >= 1.0:
            return [tuple(float(v) for v in p) for p in pts]

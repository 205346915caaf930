"""Regenerate the JSON fixtures under fixtures/.

Run from the repository root: ``python3 tools/make_fixtures.py``.
Everything is deterministic; the committed files are the output of this script.
"""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np

from tetherrisk.grid import GridMap, dumps_lines, map_to_dict, save_map
from tetherrisk.servo import ServoPose
from tetherrisk.sim import Plan6D

OUT = Path(__file__).resolve().parent.parent / "fixtures"


def write(name: str, doc: dict) -> None:
    path = OUT / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_lines(doc))


def planar(dims, occupied, start, **kw) -> GridMap:
    return GridMap(
        dims=(dims[0], dims[1], 1),
        resolution=1.0,
        occupied=frozenset((x, y, 0) for x, y in occupied),
        start=(start[0], start[1], 0),
        **kw,
    )


def cells(pairs):
    return [[x, y, 0] for x, y in pairs]


def worked_example() -> None:
    # 12x12 room with a 3x3 pillar; the path skirts the pillar's lower right corner
    occ = set()
    for i in range(12):
        occ |= {(i, 0), (i, 11), (0, i), (11, i)}
    occ |= {(i, j) for i in range(4, 7) for j in range(5, 8)}
    save_map(planar((12, 12), occ, (2, 2)), OUT / "ch3.json")
    path = [(2, 2), (3, 2), (4, 3), (5, 4), (6, 4), (7, 4), (7, 5), (8, 6), (8, 7), (9, 8), (9, 9), (9, 10)]
    # per-state finish probabilities as published; only s_75 is broken down by element
    finish = [0.99, 1.0, 1.0, 0.96, 0.96, 0.98, None, 0.95, 0.97, 0.97, 0.94, 0.93]
    table = [
        {"distance": 0.04, "turn": 0.04, "contacts": 0.03} if p is None else {"combined": round(1.0 - p, 12)}
        for p in finish
    ]
    write("ch3_path.json", {"version": 1, "path": cells(path), "element_risks": table})
    write("ch3_config.json", {
        "version": 1,
        "risk": {"enabled": ["distance", "turn", "contacts"], "d_min": 0.0, "d_safe": 2.0, "r_max_dist": 0.08},
        "graph": {"connectivity": 8},
    })


def toy() -> None:
    save_map(planar((3, 3), [(0, 1)], (0, 0)), OUT / "toy3x3.json")
    write("toy3x3_config.json", {
        "version": 1,
        "risk": {
            "enabled": ["distance", "action_length", "turn"],
            "d_min": 1.0, "d_safe": 2.0, "r_max_dist": 0.06,
            "action_coef": 0.02, "turn_coef": 0.04 / math.sqrt(2),
        },
        "graph": {"connectivity": 4},
    })


def traverse_witness() -> None:
    free = {(0, 0), (0, 1), (0, 2), (0, 3), (1, 3), (2, 3), (3, 3), (1, 0), (1, 1), (2, 1), (2, 2),
            (4, 3), (4, 4), (5, 4), (5, 5), (6, 5), (6, 6)}
    occ = [(i, j) for i in range(7) for j in range(7) if (i, j) not in free]
    save_map(planar((7, 7), occ, (0, 0)), OUT / "traverse_witness.json")
    write("traverse_witness_config.json", {
        "version": 1,
        "risk": {
            "enabled": ["action_length", "turn", "contacts"],
            "action_coef": 0.01, "turn_coef": 0.04 / math.sqrt(2), "p_contact": 0.03,
        },
        "graph": {"connectivity": 4},
        "limits": {"max_vertices": 20},
    })


def conventional() -> None:
    # two posts leave a one-cell gap on the straight line; going round them buys clearance
    posts = [(5, 2), (5, 3), (5, 5), (5, 6)]
    save_map(planar((11, 9), posts, (0, 4), poi=((10, 4, 0),)), OUT / "conventional.json")
    write("conventional_config.json", {"version": 1, "risk": {}, "graph": {"connectivity": 8}})


CONTACT_CASES = {
    "none": {
        "dims": (4, 4), "occupied": [],
        "path": [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (3, 2), (3, 3)],
        "contacts": [0, 0, 0, 0, 0, 0, 0],
        "events": ["", "", "", "", "", "", ""],
    },
    "wrap_relax": {
        "dims": (5, 3), "occupied": [(2, 1)],
        "path": [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (4, 1), (4, 0)],
        "contacts": [0, 0, 0, 0, 1, 1, 0],
        "events": ["", "", "", "", "push", "", "pop"],
    },
    "double_wrap": {
        "dims": (6, 6), "occupied": [(1, 2), (4, 2)],
        "path": [(0, 0), (0, 1), (0, 2), (0, 3), (1, 3), (2, 3), (3, 3), (4, 3), (5, 3), (5, 2), (5, 1), (5, 0)],
        "contacts": [0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2],
        "events": ["", "", "", "", "push", "", "", "", "", "push", "", ""],
    },
}


def contact_cases() -> None:
    expected = {}
    for name, case in CONTACT_CASES.items():
        m = planar(case["dims"], case["occupied"], case["path"][0])
        save_map(m, OUT / "contacts" / f"{name}_map.json")
        write(f"contacts/{name}_path.json", {"version": 1, "path": cells(case["path"])})
        expected[name] = {"contacts": case["contacts"], "events": case["events"]}
    (OUT / "contacts" / "expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")


def reduce_fixture() -> None:
    boxes = [(2, 5, 1, 2, 3, 6), (5, 8, 1, 2, 7, 10), (7, 10, 2, 3, 1, 4)]
    occ = set()
    for x0, x1, y0, y1, z0, z1 in boxes:
        occ |= set(itertools.product(range(x0, x1), range(y0, y1), range(z0, z1)))
    m = GridMap(dims=(12, 6, 12), resolution=1.0, occupied=frozenset(occ), start=(0, 0, 0))
    save_map(m, OUT / "reduce_3obs.json")


def over_reel(spacing: float, h: float = 1.0, length: float = 3.0) -> list[tuple[float, float, float]]:
    n = int(round(length / spacing))
    d = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    return [tuple(float(v) for v in np.array([0.0, h, 0.0]) + s * d) for s in np.linspace(-length / 2, length / 2, n + 1)]


def sim_plans() -> None:
    for spacing in (3.0, 1.5, 1.0, 0.5, 0.2):
        write(f"sim/over_reel_{spacing:g}.json", Plan6D.from_points(over_reel(spacing)).to_dict())
    # sparse L with 3 m legs flown 1 m up, corner 2 m from the reel
    pts = [(-1.0, 1.0, -1.0), (-1.0, 1.0, 2.0), (2.0, 1.0, 2.0)]
    write("sim/l_plan.json", Plan6D.from_points(pts).to_dict())


def servo() -> None:
    dt = 0.05
    poses = []
    for k in range(1000):
        t = k * dt
        p = ServoPose(1.5 * math.sin(0.2 * t), 0.3 * math.sin(0.5 * t), 4.0 + 0.5 * math.cos(0.1 * t),
                      0.4 * math.sin(0.15 * t), 0.1 * math.sin(0.3 * t), 0.0)
        poses.append([round(float(v), 12) for v in p.as_array()])
    write("servo/target_traj.json", {"version": 1, "dt": dt, "poses": poses})
    write("servo/desired_view.json", {"version": 1, "pose": [0.0, 0.0, 2.0, 0.0, 0.0, 0.0]})
    write("servo/gains.json", {"version": 1, "kp": [2.0, 2.0, 2.0, 2.0, 2.0, 0.0], "kd": [0.05] * 6, "exact": False})
    write("servo/gains_exact.json", {"version": 1, "exact": True})


def main() -> None:
    for sub in ("contacts", "sim", "servo"):
        (OUT / sub).mkdir(parents=True, exist_ok=True)
    worked_example()
    toy()
    traverse_witness()
    conventional()
    contact_cases()
    reduce_fixture()
    sim_plans()
    servo()


if __name__ == "__main__":
    main()

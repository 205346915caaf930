import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tetherrisk.errors import ValidationError
from tetherrisk.grid import (
    GraphConfig,
    GridMap,
    inflate,
    load_map,
    map_from_dict,
    map_to_dict,
    neighbors,
    ray_length,
    save_map,
    segment_blocked,
)

from helpers import FIXTURES, planar


def write_json(tmp_path, doc, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# oracles -------------------------------------------------------------------

def chebyshev_inflate_oracle(m: GridMap, r: int) -> set:
    out = set(m.occupied)
    for c in itertools.product(*map(range, m.dims)):
        for o in m.occupied:
            if max(abs(a - b) for a, b in zip(c, o)) <= r:
                out.add(c)
                break
    return out


def sampled_blocked(m: GridMap, a, b, step: float) -> bool:
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
    for t in np.linspace(0.0, 1.0, n):
        p = a + t * (b - a)
        if m.cell_of(p) in m.occupied:
            return True
    return False


# load_map --------------------------------------------------------------------

def test_minimal_map_has_nine_free_cells(tmp_path):
    p = write_json(tmp_path, {"version": 1, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [0, 0, 0]})
    m = load_map(p)
    assert len(m.free_cells) == 9


def test_worked_example_map_free_count():
    m = load_map(FIXTURES / "ch3.json")
    # 12x12 room: 44 wall cells and a 3x3 pillar
    assert m.dims == (12, 12, 1)
    assert len(m.free_cells) == 144 - 44 - 9


def test_start_in_obstacle_rejected(tmp_path):
    doc = {"version": 1, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [1, 1, 0], "occupied": [[1, 1, 0]]}
    with pytest.raises(ValidationError, match="occupied"):
        load_map(write_json(tmp_path, doc))


@pytest.mark.parametrize("doc, msg", [
    ({"version": 1, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [0, 0, 0], "colour": 1}, "unknown"),
    ({"version": 2, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [0, 0, 0]}, "version"),
    ({"version": 1, "resolution_m": 0.0, "dims": [3, 3, 1], "start": [0, 0, 0]}, "resolution"),
    ({"version": 1, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [0, 0, 0], "occupied": [[5, 0, 0]]}, "outside"),
    ({"version": 1, "resolution_m": 1.0, "dims": [3, 3, 1], "start": [0, 0, 0],
      "occupied": [[1, 0, 0]], "rewards": [{"cell": [1, 0, 0], "value": 1.0}]}, "reward"),
])
def test_invalid_documents(tmp_path, doc, msg):
    with pytest.raises(ValidationError, match=msg):
        load_map(write_json(tmp_path, doc))


def test_parse_error_names_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError, match="bad.json"):
        load_map(p)


def test_save_load_round_trip(tmp_path):
    m = load_map(FIXTURES / "ch3.json")
    save_map(m, tmp_path / "copy.json")
    again = load_map(tmp_path / "copy.json")
    assert again == m
    assert map_to_dict(again) == map_to_dict(m)


# inflate ---------------------------------------------------------------------

def test_inflate_zero_is_identity():
    m = load_map(FIXTURES / "ch3.json")
    assert inflate(m, 0) == m


def test_inflate_single_cell_26_neighborhood():
    m = GridMap((5, 5, 5), 1.0, frozenset({(2, 2, 2)}), start=(0, 0, 0))
    assert len(inflate(m, 1).occupied) == 27


def test_inflate_worked_example_matches_recount():
    m = load_map(FIXTURES / "ch3.json")
    grown = inflate(m, 1)
    assert grown.occupied == chebyshev_inflate_oracle(m, 1)
    assert len(grown.free_cells) == 144 - len(chebyshev_inflate_oracle(m, 1))


def test_inflate_swallowing_start_fails():
    with pytest.raises(ValidationError, match="start"):
        inflate(planar(4, 4, [(1, 1)]), 1)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.integers(0, 2))
def test_inflate_monotone_and_superadditive(seed, a, b):
    rng = np.random.default_rng(seed)
    occ = {(int(x), int(y)) for x, y in rng.integers(5, 10, size=(3, 2))}
    m = planar(15, 15, occ)
    once = inflate(m, a)
    assert m.occupied <= once.occupied
    assert inflate(once, b).occupied >= inflate(m, a + b).occupied


# neighbors -------------------------------------------------------------------

@pytest.mark.parametrize("cell, conn, count", [((1, 1, 0), 4, 4), ((0, 0, 0), 8, 3), ((1, 1, 0), 8, 8)])
def test_neighbor_counts_empty_3x3(cell, conn, count):
    assert len(neighbors(planar(3, 3), cell, GraphConfig(conn))) == count


def test_neighbors_next_to_pillar():
    m = load_map(FIXTURES / "ch3.json")
    # (3,4) touches the pillar corner at (4,5)
    assert len(neighbors(m, (3, 4, 0), GraphConfig(8))) == 7


def test_neighbors_of_occupied_cell_rejected():
    with pytest.raises(ValueError):
        neighbors(planar(3, 3, [(1, 1)]), (1, 1, 0), GraphConfig(4))


def test_3d_connectivities():
    m = GridMap((3, 3, 3), 1.0, start=(0, 0, 0))
    assert len(neighbors(m, (1, 1, 1), GraphConfig(6))) == 6
    assert len(neighbors(m, (1, 1, 1), GraphConfig(26))) == 26


def test_graph_config_validation():
    with pytest.raises(ValidationError):
        GraphConfig(5)
    with pytest.raises(ValidationError):
        GraphConfig(4, r_c=0.5)


@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]))
def test_neighbor_symmetry(seed, conn):
    rng = np.random.default_rng(seed)
    occ = [(x, y) for x in range(5) for y in range(5) if (x, y) != (0, 0) and rng.random() < 0.3]
    m = planar(5, 5, occ)
    g = GraphConfig(conn)
    for s in m.free_cells:
        for t in neighbors(m, s, g):
            assert s in neighbors(m, t, g)


# segment_blocked -------------------------------------------------------------

def test_degenerate_segment_in_free_cell():
    m = load_map(FIXTURES / "ch3.json")
    p = m.center((2, 2, 0))
    assert not segment_blocked(m, p, p)


def test_segment_through_pillar():
    m = load_map(FIXTURES / "ch3.json")
    assert segment_blocked(m, m.center((2, 6, 0)), m.center((9, 6, 0)))


def test_segment_along_corridor():
    m = load_map(FIXTURES / "ch3.json")
    assert not segment_blocked(m, m.center((1, 2, 0)), m.center((10, 2, 0)))


def test_grazing_a_corner_is_clear():
    m = planar(3, 3, [(1, 1)])
    assert not segment_blocked(m, (0.0, 0.0, 0.5), (2.0, 1.0, 0.5))
    assert not segment_blocked(m, (1.0, 0.2, 0.5), (1.0, 2.8, 0.5))


def test_out_of_bounds_point_rejected():
    with pytest.raises(ValueError):
        segment_blocked(planar(3, 3), (0.5, 0.5, 0.5), (4.0, 0.5, 0.5))


@pytest.mark.parametrize("name", ["ch3.json", "reduce_3obs.json", "traverse_witness.json"])
def test_segment_blocked_matches_sampling_oracle(name):
    m = load_map(FIXTURES / name)
    rng = np.random.default_rng(7)
    ext = m.extent
    for _ in range(1000):
        a, b = rng.uniform(0, 1, 3) * ext, rng.uniform(0, 1, 3) * ext
        exact = segment_blocked(m, a, b)
        assert exact == segment_blocked(m, b, a)
        coarse = sampled_blocked(m, a, b, m.resolution / 10)
        if exact != coarse:
            # a coarse sampler can only miss a clipped corner, never invent a hit
            assert exact and sampled_blocked(m, a, b, m.resolution / 5000)


@given(st.lists(st.floats(0.0, 6.0), min_size=6, max_size=6))
def test_segment_blocked_symmetric(coords):
    m = planar(6, 6, [(2, 2), (3, 2), (4, 4)])
    a = (coords[0], coords[1], coords[2] / 6.0)
    b = (coords[3], coords[4], coords[5] / 6.0)
    assert segment_blocked(m, a, b) == segment_blocked(m, b, a)


def test_ray_length_to_boundary_and_obstacle():
    m = planar(5, 5, [(4, 2)])
    assert ray_length(m, (2.5, 2.5, 0.5), (1, 0, 0)) == pytest.approx(1.5)
    assert ray_length(m, (2.5, 2.5, 0.5), (0, 1, 0)) == pytest.approx(2.5)
    assert ray_length(m, (2.5, 2.5, 0.5), (0, 1, 0), boundary=False) == float("inf")


def test_map_dict_rejects_malformed_reward():
    doc = map_to_dict(planar(3, 3))
    doc["rewards"] = [{"cell": [1, 1, 0]}]
    with pytest.raises(ValidationError):
        map_from_dict(doc)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polaron_bounds import clusters as cl


def closure_groups(config, d):
    """Brute-force oracle: transitive closure of the relation d(i,j) < d."""
    n = config.N
    reach = np.eye(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if cl.box_distance(i, j, config) < d:
                reach[i, j] = True
    while True:
        nxt = (reach.astype(int) @ reach.astype(int)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return {frozenset(np.flatnonzero(reach[i]).tolist()) for i in range(n)}


def random_config(rng, n_max=50):
    n = int(rng.integers(1, n_max + 1))
    spread = 3.0 * n ** (1 / 3)
    return cl.BoxConfiguration(rng.uniform(-spread, spread, (n, 3)), float(rng.uniform(0.2, 1.5)))


# -- box distance ------------------------------------------------------------

def test_box_distance_examples():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [3, 4, 0], [0, 0, 0], [1, 0, 0]]), 1.0)
    assert cl.box_distance(0, 2, cfg) == 0.0
    assert cl.box_distance(0, 1, cfg) == pytest.approx(math.sqrt(13))
    assert cl.box_distance(0, 3, cfg) == 0.0
    with pytest.raises(cl.IndexOutOfRange):
        cl.box_distance(0, 4, cfg)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.floats(0.1, 5))
def test_box_distance_symmetric(coords, side):
    cfg = cl.BoxConfiguration(np.array(coords).reshape(2, 3), side)
    assert cl.box_distance(0, 1, cfg) == cl.box_distance(1, 0, cfg) >= 0.0
    touching = np.all(np.abs(cfg.centers[0] - cfg.centers[1]) <= side)
    assert (cl.box_distance(0, 1, cfg) == 0.0) == bool(touching)


def test_configuration_validation():
    with pytest.raises(cl.ClusterError):
        cl.BoxConfiguration(np.zeros((2, 2)), 1.0)
    with pytest.raises(cl.ClusterError):
        cl.BoxConfiguration(np.zeros((2, 3)), 0.0)


def test_from_csv_skips_header_and_comments():
    cfg = cl.BoxConfiguration.from_csv("x,y,z\n# comment\n0,0,0\n2,0,0\n", 1.0)
    assert cfg.N == 2


# -- partition ---------------------------------------------------------------

def test_single_box():
    part = cl.partition(cl.BoxConfiguration(np.zeros((1, 3)), 1.0), 1.0)
    assert part.groups == ((0,),)


def test_far_apart_singletons():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [10, 0, 0]]), 1.0)
    assert cl.partition(cfg, 2.0).sizes == (1, 1)


def test_chain_joins_transitively():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [2, 0, 0], [4, 0, 0]]), 1.0)
    assert cl.box_distance(0, 2, cfg) == 3.0
    part = cl.partition(cfg, 1.5)
    assert part.groups == ((0, 1, 2),)
    assert cl.enclosing_cube_side(part.groups[0], cfg) == 5.0 <= 3 * (1 + 1.5)


def test_tie_does_not_join():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [3, 0, 0]]), 1.0)
    assert cl.partition(cfg, 2.0).sizes == (1, 1)


def test_threshold_must_be_positive():
    with pytest.raises(cl.ClusterError):
        cl.partition(cl.BoxConfiguration(np.zeros((1, 3)), 1.0), 0.0)


def test_enclosing_cube():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [0, 0, 0]]), 1.3)
    assert cl.enclosing_cube_side([0], cfg) == 1.3
    assert cl.enclosing_cube_side([0, 1], cfg) == 1.3
    with pytest.raises(cl.EmptyGroup):
        cl.enclosing_cube_side([], cfg)


def test_partition_matches_closure_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        cfg = random_config(rng, 30)
        d = float(rng.uniform(0.05, 3.0))
        part = cl.partition(cfg, d)
        assert set(map(frozenset, part.groups)) == closure_groups(cfg, d)
        assert all(cl.check_properties(part, cfg).values())


def test_monotone_in_threshold():
    rng = np.random.default_rng(5)
    for _ in range(30):
        cfg = random_config(rng, 25)
        counts = [len(cl.partition(cfg, d).groups) for d in np.linspace(0.05, 6.0, 12)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_threshold_limits():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [3, 0, 0], [0, 5, 0], [7, 7, 7]]), 1.0)
    assert len(cl.partition(cfg, 1e-9).groups) == cfg.N
    diameter = cl.distance_matrix(cfg).max()
    assert len(cl.partition(cfg, diameter + 1e-9).groups) == 1


def test_partition_json_roundtrip():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [2, 0, 0], [9, 0, 0]]), 1.0)
    part = cl.partition(cfg, 1.5)
    assert cl.ClusterPartition.from_json(part.to_json()) == part


def test_union_find():
    uf = cl.UnionFind(5)
    assert uf.union(0, 1) and uf.union(3, 4) and not uf.union(1, 0)
    assert uf.groups() == [(0, 1), (2,), (3, 4)]

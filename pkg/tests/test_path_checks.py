import json
import math

import numpy as np
import pytest

from polaron_bounds import clusters as cl
from polaron_bounds import path_checks as pc

SQRT3 = math.sqrt(3.0)


@pytest.fixture(scope="module")
def unit_box():
    return cl.BoxConfiguration(np.zeros((1, 3)), 1.0)


def test_bridge_closed_and_confined(unit_box):
    path = pc.sample_confined_bridge(unit_box, 0, 1.0, 100, seed=4)
    assert path.positions.shape == (101, 3)
    np.testing.assert_array_equal(path.positions[0], path.positions[-1])
    assert np.all(np.abs(path.positions) < 0.5)


def test_bridge_deterministic(unit_box):
    a = pc.sample_confined_bridge(unit_box, 0, 1.0, 100, seed=9)
    b = pc.sample_confined_bridge(unit_box, 0, 1.0, 100, seed=9)
    assert a.positions.tobytes() == b.positions.tobytes()
    c = pc.sample_confined_bridge(unit_box, 0, 1.0, 100, seed=10)
    assert not np.array_equal(a.positions, c.positions)


def test_bridge_confined_over_many_seeds(unit_box):
    worst = max(float(np.max(np.abs(pc.sample_confined_bridge(unit_box, 0, 1.0, 100, s).positions)))
                for s in range(1000))
    assert worst < 0.5


def test_short_time_bridge_hugs_centre(unit_box):
    spreads = [np.std(np.concatenate([pc.sample_confined_bridge(unit_box, 0, T, 20, s).positions
                                      for s in range(20)]))
               for T in (1e-2, 1e-4, 1e-6)]
    assert spreads[0] > spreads[1] > spreads[2]
    assert spreads[2] < 1e-2


def test_bridge_unconditioned_variance():
    # a box this large never rejects; the bridge variance at the midpoint is 2 T / 4 per axis
    cfg = cl.BoxConfiguration(np.zeros((1, 3)), 1e3)
    mids = np.array([pc.sample_confined_bridge(cfg, 0, 1.0, 10, s).positions[5] for s in range(2000)])
    assert np.var(mids) == pytest.approx(0.5, rel=0.1)


def test_bridge_budget_exceeded():
    tiny = cl.BoxConfiguration(np.zeros((1, 3)), 1e-3)
    with pytest.raises(pc.RejectionBudgetExceeded) as info:
        pc.sample_confined_bridge(tiny, 0, 1.0, 50, seed=0, budget=2000)
    assert info.value.attempts == 2000
    assert info.value.acceptance_rate == 0.0


def test_bridge_validation(unit_box):
    with pytest.raises(ValueError):
        pc.sample_confined_bridge(unit_box, 0, 0.0, 10, 0)
    with pytest.raises(ValueError):
        pc.sample_confined_bridge(unit_box, 0, 1.0, 1, 0)


def test_confined_path_invariants(unit_box):
    pos = np.zeros((5, 3))
    pos[2] = [0.6, 0.0, 0.0]
    with pytest.raises(pc.PathError):
        pc.ConfinedPath(0, 1.0, 4, pos, (0, 0, 0), 1.0)
    pos[2] = [0.1, 0.0, 0.0]
    pos[-1] = [0.01, 0.0, 0.0]
    with pytest.raises(pc.PathError):
        pc.ConfinedPath(0, 1.0, 4, pos, (0, 0, 0), 1.0)


# -- distance bounds ---------------------------------------------------------

def test_static_centres_pass():
    rng = np.random.default_rng(1)
    for _ in range(50):
        cfg = pc._disjoint_pair(rng, 1.0)
        a = pc.ConfinedPath.static(0, cfg.centers[0], cfg)
        b = pc.ConfinedPath.static(1, cfg.centers[1], cfg)
        rep = pc.verify_path_distance_bounds(a, b, cfg)
        assert rep.passed
        assert rep.min_distance == rep.max_distance == pytest.approx(np.linalg.norm(cfg.centers[1]))


def test_corner_to_corner_saturates_upper_bound():
    cfg = cl.BoxConfiguration(np.array([[0.0, 0, 0], [3.0, 3.0, 3.0]]), 1.0)
    eps = 1e-12
    far_a = pc.ConfinedPath.static(0, np.full(3, -0.5 + eps), cfg)
    far_b = pc.ConfinedPath.static(1, np.full(3, 3.5 - eps), cfg)
    rep = pc.verify_path_distance_bounds(far_a, far_b, cfg, tol=1e-9)
    assert rep.max_distance == pytest.approx(cl.box_distance(0, 1, cfg) + 2 * SQRT3, abs=1e-9)
    assert rep.passed


def test_sampled_pairs_have_no_violations():
    report = pc.sweep_distance_bounds(n_pairs=100, seed=3)
    assert report.pairs_checked == 100 and report.violations == 0
    assert report.worst_margin >= 0.0


# -- cluster split -----------------------------------------------------------

def test_lag_weights_mass():
    w = pc.lag_weights(50, 0.5)
    assert w.sum() == pytest.approx(1.0 - math.exp(-40.0), rel=1e-14)
    assert np.all(w > 0)


def test_single_cluster_is_equality(unit_box):
    cfg = cl.BoxConfiguration(np.array([[0.0, 0, 0], [1.5, 0, 0], [0, 1.5, 0]]), 1.0)
    part = cl.partition(cfg, 1.0)
    assert len(part.groups) == 1
    paths = [pc.sample_confined_bridge(cfg, i, 0.25, 32, 20 + i) for i in range(3)]
    rep = pc.integrand_cluster_split_check(paths, part, cfg, 1.0, 3.0)
    assert rep.inter_bound == 0.0
    assert abs(rep.margin) <= rep.tolerance
    assert rep.passed


def test_far_singletons_margin_formula():
    D = 10.0
    cfg = cl.BoxConfiguration(np.array([[0.0, 0, 0], [D, 0, 0]]), 1.0)
    part = cl.partition(cfg, 1.0)
    T, alpha = 2.0, 1.5
    paths = [pc.ConfinedPath.static(i, cfg.centers[i], cfg, T=T, n_steps=8) for i in range(2)]
    rep = pc.integrand_cluster_split_check(paths, part, cfg, alpha, 0.0)
    dbox = cl.box_distance(0, 1, cfg)
    mass = 1.0 - math.exp(-40.0)
    expected = 2 * alpha * T * (mass / D - 1.0 / dbox)
    assert rep.lhs - rep.rhs == pytest.approx(expected, rel=1e-10)
    assert rep.passed


def test_quadrature_unstable_for_touching_paths():
    cfg = cl.BoxConfiguration(np.array([[0.0, 0, 0], [0.5, 0, 0]]), 1.0)
    part = cl.partition(cfg, 1.0)
    point = np.array([0.25, 0.0, 0.0])
    paths = [pc.ConfinedPath.static(i, point, cfg) for i in range(2)]
    with pytest.raises(pc.QuadratureUnstable):
        pc.integrand_cluster_split_check(paths, part, cfg, 1.0, 1.0)


def test_sampled_ensembles_satisfy_split():
    report = pc.sweep_split(n_ensembles=20, seed=5)
    assert report.violations == 0
    assert report.pairs_checked + report.skipped == 20


def test_report_merge_associative():
    a = pc.PathCheckReport(2, 0, 0.3, 1e-6, [1, 2])
    b = pc.PathCheckReport(3, 1, -0.1, 2e-6, [3])
    c = pc.PathCheckReport(1, 0, 0.5, 1e-6, [4], 1)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    merged = json.loads(a.merge(b).to_json())
    assert merged["pairs_checked"] == 5 and merged["violations"] == 1
    assert merged["seeds"] == [1, 2, 3]

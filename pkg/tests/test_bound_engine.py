import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy.utilities.iterables import partitions

from polaron_bounds import bound_engine as be
from polaron_bounds import clusters as cl
from polaron_bounds import pt_solver as ps

SQRT3 = math.sqrt(3.0)


def table_provider(N, nu):
    """Stand-in PT values: concave and decreasing-in-magnitude in nu."""
    base = {1: -0.1085, 2: -0.8681, 3: -2.9298}.get(N, -0.1085 * N**3)
    return ps.EnergyEstimate(base / (1.0 + 0.1 * nu * (N - 1)), ps.UPPER, N, nu)


def brute_partition_min(N, v):
    return min(sum(v[k] * m for k, m in p.items()) for p in partitions(N))


# -- elementary pieces -------------------------------------------------------

def test_ims_penalty():
    assert be.ims_penalty(1, math.pi) == pytest.approx(3.0)
    assert be.ims_penalty(2, 1.0) == pytest.approx(59.2176, rel=1e-5)
    assert be.ims_penalty(3, 2.0) == pytest.approx(be.ims_penalty(3, 1.0) / 4)
    with pytest.raises(be.NonpositiveR):
        be.ims_penalty(1, 0.0)


def test_zero_correction_threshold():
    assert be.zero_correction_threshold(4.0, 1.0) == pytest.approx(2 * SQRT3)
    assert be.zero_correction_threshold(1e9, 1.0) < 1e-8
    with pytest.raises(be.NuNotAboveTwo):
        be.zero_correction_threshold(2.0, 1.0)
    with pytest.raises(be.NonpositiveR):
        be.zero_correction_threshold(3.0, -1.0)


@settings(max_examples=60)
@given(st.floats(2.01, 50.0), st.floats(0.01, 10.0), st.floats(0.0, 1.0), st.floats(1e-3, 1e3))
def test_pair_term_sign_below_threshold(nu, R, frac, alpha):
    d = be.zero_correction_threshold(nu, R)
    assert abs(be.intercluster_pair_term(d, alpha, nu, R)) <= 1e-12 * alpha / d
    g = max(frac * d, 1e-9)
    assert be.intercluster_pair_term(g, alpha, nu, R) >= -1e-12 * alpha / g


def test_intercluster_single_cluster_is_zero():
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [2, 0, 0]]), 1.0)
    corr = be.intercluster_correction(cl.partition(cfg, 1.5), cfg, 1.0, 0.0)
    assert corr.exact == 0.0 and corr.pairs == 0


def test_intercluster_two_singletons():
    # gap 1; every ordered pair (i, j) in different clusters contributes alpha / gap
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [2, 0, 0]]), 1.0)
    part = cl.partition(cfg, 0.5)
    corr = be.intercluster_correction(part, cfg, 1.0, 0.0)
    assert be.intercluster_pair_term(1.0, 1.0, 0.0, 1.0) == 1.0
    assert corr.pairs == 2
    assert corr.exact == pytest.approx(2.0)
    assert corr.crude == pytest.approx(4.0 / 0.5)


def test_intercluster_at_threshold_vanishes():
    nu, R = 4.0, 1.0
    d = be.zero_correction_threshold(nu, R)
    cfg = cl.BoxConfiguration(np.array([[0, 0, 0], [R + d, 0, 0], [0, R + d, 0]]), R)
    part = cl.ClusterPartition(d, ((0,), (1,), (2,)))
    assert cl.box_distance(0, 1, cfg) == pytest.approx(d)
    corr = be.intercluster_correction(part, cfg, 1.0, nu)
    # boxes 1 and 2 are farther apart than d, where the pair term is negative
    assert be.intercluster_pair_term(cl.box_distance(0, 1, cfg), 1.0, nu, R) == pytest.approx(0.0, abs=1e-12)
    assert corr.exact <= 1e-12


def test_intercluster_exact_below_crude():
    rng = np.random.default_rng(2)
    for _ in range(20):
        cfg = cl.BoxConfiguration(rng.uniform(-8, 8, (8, 3)), 1.0)
        part = cl.partition(cfg, 1.0)
        corr = be.intercluster_correction(part, cfg, 2.0, 0.0)
        assert corr.exact <= corr.crude


def test_concavity_adjust():
    assert be.concavity_adjust(-4.0, -10.0, 3.0, 3.0) == -4.0
    assert be.concavity_adjust(-4.0, -10.0, 3.0, 0.0) == -10.0
    assert be.concavity_adjust(-4.0, -10.0, 3.0, 1.5) == pytest.approx(-7.0)
    with pytest.raises(be.OrderingViolated):
        be.concavity_adjust(-4.0, -10.0, 3.0, 3.5)


# -- partition DP ------------------------------------------------------------

def test_partition_linear_values_give_singletons():
    value, parts = be.optimal_partition_value(7, lambda k: 2.5 * k)
    assert value == pytest.approx(17.5)
    assert parts == (1,) * 7


def test_partition_superadditive_gives_singletons():
    value, parts = be.optimal_partition_value(6, lambda k: k**2)
    assert parts == (1,) * 6 and value == 6


def test_partition_subadditive_prefers_whole():
    value, parts = be.optimal_partition_value(5, lambda k: -(k**2))
    assert parts == (5,) and value == -25


def test_partition_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = {k: float(rng.normal()) for k in range(1, 13)}
        for N in range(1, 13):
            value, parts = be.optimal_partition_value(N, v)
            assert sum(parts) == N
            assert value == pytest.approx(sum(v[k] for k in parts), abs=1e-12)
            assert value == pytest.approx(brute_partition_min(N, v), abs=1e-12)


# -- schedules ---------------------------------------------------------------

def test_schedule_strong_values():
    p = be.schedule_strong(3.0, 1e5, 2, strict=False)
    assert p.K[2] == pytest.approx(2**0.2 * 1e6, rel=1e-12)
    assert p.K[2] == pytest.approx(1.1487e6, rel=1e-4)
    assert p.delta[2] == pytest.approx(0.17411, rel=1e-4)
    assert p.d == pytest.approx(4 * SQRT3 * p.R / (3.0 - 2.0))
    # the admissibility threshold is 2^4 * 6^5 = 124416 > 1e5, and with it
    # nu_tilde(2) = 3 (1 - 2 delta(2)) drops below 2
    assert not p.flags["admissible"]
    assert not p.flags["nu_tilde>2"]
    assert all(v for k, v in p.flags.items() if "[" in k)
    assert be.schedule_strong(3.0, 1.3e5, 2).valid()


def test_schedule_strong_alpha_too_small():
    with pytest.raises(be.AlphaTooSmall, match="124416"):
        be.schedule_strong(3.0, 10.0, 2)
    with pytest.raises(be.NuNotAboveTwo):
        be.schedule_strong(2.0, 1e6, 1)


def test_schedule_strong_exponent_of_K():
    a = be.schedule_strong(3.0, 1e5, 1)
    b = be.schedule_strong(3.0, 2e5, 1)
    assert b.K[1] / a.K[1] == pytest.approx(2**1.2, rel=1e-14)


def test_schedule_general():
    with pytest.raises(be.AlphaTooSmall):
        be.schedule_general(1.0, 100.0, 3)
    p = be.schedule_general(1.0, 100.0, 3, strict=False)
    assert p.delta[1] == pytest.approx(100 ** (-4 / 23), rel=1e-14)
    assert p.delta[1] == pytest.approx(0.4489, abs=1e-4)
    assert p.flags["2delta<1[1]"]
    assert p.K[3] == pytest.approx(3 * 100 ** (27 / 23))
    q = be.schedule_general(1.0, 1e4, 3, constants=(1, 1, 1, 1, 2.5))
    assert q.valid()
    assert q.d / q.R == 2.5


def test_constants_must_be_positive():
    with pytest.raises(ValueError):
        be.schedule_general(0.0, 1e4, 1, constants=(1, 1, 1, 1, 0))


# -- cluster bound -----------------------------------------------------------

def manual_params(K=100.0, P=10.0, delta=0.1, R=0.5, d=0.5):
    return be.BoundParameters(1.0, 0.0, R, d, {1: K}, {1: P}, {1: delta})


def test_cluster_bound_example():
    cb = be.cluster_bound_F(1, manual_params(), lambda k, nu: -0.1085)
    expected = (-0.1085 / (0.64 * (1 - 8 / (100 * math.pi)))
                - 9e4 / (0.1 * math.pi) - 21**3 - 0.5)
    assert cb.value == pytest.approx(expected, rel=1e-12)
    assert cb.value == pytest.approx(-2.9574e5, rel=1e-4)


def test_cluster_bound_locality_linear_in_K():
    loc = [be.cluster_bound_F(1, manual_params(K=K), lambda k, nu: -0.1).locality_term
           for K in (100.0, 200.0, 300.0)]
    assert loc[1] - loc[0] == pytest.approx(loc[2] - loc[1], rel=1e-12)
    assert loc[1] > loc[0]


def test_cluster_bound_zero_pt_value():
    cb = be.cluster_bound_F(1, manual_params(), lambda k, nu: 0.0)
    assert cb.value == -(cb.locality_term + cb.mode_count_term + 0.5) < 0


def test_cluster_bound_hypotheses():
    with pytest.raises(be.HypothesisViolated):
        be.cluster_bound_F(1, manual_params(delta=0.5), lambda k, nu: -0.1)
    with pytest.raises(be.HypothesisViolated):
        be.cluster_bound_F(1, manual_params(K=2.0), lambda k, nu: -0.1)


@settings(max_examples=60)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(1.0, 4.0), st.floats(-5.0, 0.0))
def test_cluster_bound_monotone_in_geometry(R, d, factor, E):
    base = be.cluster_bound_F(1, manual_params(R=R, d=d), lambda k, nu: E).value
    assert be.cluster_bound_F(1, manual_params(R=factor * R, d=d), lambda k, nu: E).value <= base
    assert be.cluster_bound_F(1, manual_params(R=R, d=factor * d), lambda k, nu: E).value <= base


# -- certificates ------------------------------------------------------------

@pytest.mark.parametrize("regime,nu,alpha,N", [("strong", 3.0, 1e5, 1), ("strong", 3.0, 2e5, 2),
                                               ("general", 0.0, 1e4, 3), ("general", 1.0, 1e6, 2)])
def test_certificate_recomputable(regime, nu, alpha, N):
    c = (1.0,) * (4 if regime == "strong" else 5)
    cert = be.theorem1_certificate(regime, nu, alpha, N, c, table_provider)
    assert cert.recompute() == pytest.approx(cert.final, rel=1e-12)
    assert cert.valid
    assert cert.label == "heuristic lower bound"
    assert sum(cert.witness) == N
    upper = alpha**2 * table_provider(N, nu).value
    assert cert.final <= upper
    for name in be.TERM_ORDER[1:]:
        assert cert.terms[name] <= 0.0


def test_certificate_strong_has_no_intercluster_term():
    cert = be.theorem1_certificate("strong", 3.0, 2e5, 2, (1, 1, 1, 1), table_provider)
    assert cert.terms["intercluster_term"] == 0.0
    assert cert.flags["d>=4sqrt3R/(nu-2)"]


def test_certificate_rigorous_label_for_lower_inputs():
    lower = lambda N, nu: ps.EnergyEstimate(-0.2, ps.LOWER, N, nu)
    cert = be.theorem1_certificate("strong", 3.0, 1e5, 1, (1, 1, 1, 1), lower)
    assert cert.label == "lower bound"


def test_certificate_json_deterministic():
    a = be.theorem1_certificate("general", 1.0, 1e4, 2, (1,) * 5, table_provider).to_json()
    b = be.theorem1_certificate("general", 1.0, 1e4, 2, (1,) * 5, table_provider).to_json()
    assert a == b
    data = json.loads(a)
    assert list(data) == sorted(data)
    assert set(data["terms"]) == set(be.TERM_ORDER)
    assert data["provenance"][0]["kind"] == ps.UPPER


def test_certificate_errors():
    with pytest.raises(be.AlphaTooSmall):
        be.theorem1_certificate("strong", 3.0, 10.0, 2, (1, 1, 1, 1), table_provider)
    with pytest.raises(ValueError):
        be.theorem1_certificate("weak", 3.0, 1e5, 1, (1, 1, 1, 1), table_provider)

    def broken(N, nu):
        raise RuntimeError("grid exploded")
    with pytest.raises(ps.ProviderFailure):
        be.theorem1_certificate("strong", 3.0, 1e5, 1, (1, 1, 1, 1), broken)


@pytest.mark.parametrize("regime,nu,N,alpha,exponent", [
    ("strong", 3.0, 1, 1e5, 9 / 5), ("strong", 5.0, 2, 1e6, 9 / 5),
    ("general", 1.0, 2, 1e4, 42 / 23), ("general", 0.0, 3, 1e5, 42 / 23)])
def test_pure_error_scaling(regime, nu, N, alpha, exponent):
    c = (1.0,) * (4 if regime == "strong" else 5)
    a = be.theorem1_certificate(regime, nu, alpha, N, c, table_provider)
    b = be.theorem1_certificate(regime, nu, 2 * alpha, N, c, table_provider)
    assert a.witness == b.witness
    assert b.pure_error_part() / a.pure_error_part() == pytest.approx(2**exponent, rel=1e-9)


def test_larger_error_constants_never_help():
    cert = be.theorem1_certificate("general", 1.0, 1e4, 2, (1,) * 5, table_provider)
    for name in be.TERM_ORDER[1:]:
        worse = dict(cert.terms)
        worse[name] *= 2.0
        assert math.fsum(worse.values()) <= cert.final


def test_expanded_bound_below_leading_term():
    E = -0.1085
    alpha = 1e6
    expanded = be.expanded_strong_bound(3.0, alpha, 1, (1, 1, 1, 1), E)
    assert expanded < alpha**2 * E


def test_search_constants_improves_on_default():
    base = be.theorem1_certificate("strong", 3.0, 1e5, 1, (1, 1, 1, 1), table_provider)
    best = be.search_constants("strong", 3.0, 1e5, 1, table_provider, grid=(0.5, 1.0, 2.0))
    assert best is not None and best.final >= base.final
    assert be.search_constants("strong", 3.0, 10.0, 1, table_provider, grid=(1.0,)) is None

"""Property-based checks of the structural invariants."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hhfl.analysis import BoundConfig, ConvergenceCriterion, TimeModel, detect_convergence, overall_time, theorem1_bound
from hhfl.engine import Schedule, client_aggregate, cloud_aggregate, edge_aggregate, virtual_global, virtual_global_nested
from hhfl.learner import ProblemConstants
from hhfl.topology import build_topology, random_topology_spec, to_single_assignment
from hhfl.traceio import fmt

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _topology(seed, **kw):
    return build_topology(random_topology_spec(np.random.default_rng(seed), **kw))


@given(seeds)
def test_topology_invariants(seed):
    topo = _topology(seed)
    assert abs(topo.p.sum() - 1) <= 1e-12
    assert abs(topo.lozenge.sum() - 1) <= 1e-12
    for n, members in enumerate(topo.coverage):
        for i in range(topo.num_clients):
            assert (i in members) == (n in topo.connectivity[i])
    r = topo.num_links() / topo.num_clients
    assert 1 <= r <= max(len(s) for s in topo.connectivity)


@given(seeds, seeds)
def test_single_assignment_partitions_and_balances(seed, assign_seed):
    topo = _topology(seed)
    sa = to_single_assignment(topo, assign_seed)
    members = sa.members()
    assert sorted(i for m in members for i in m) == list(range(topo.num_clients))
    regions = {}
    for i, s in enumerate(topo.connectivity):
        regions.setdefault(s, []).append(sa.assigned_es[i])
    for region, picks in regions.items():
        counts = [picks.count(n) for n in region]
        assert max(counts) - min(counts) <= 1
    assert sa.assigned_es == to_single_assignment(topo, assign_seed).assigned_es


@given(seeds, st.floats(-1e3, 1e3, allow_nan=False))
def test_constant_vectors_are_fixed_points(seed, value):
    topo = _topology(seed)
    v = np.full((topo.num_clients, 3), value)
    es = np.full((topo.num_es, 3), value)
    tol = 1e-12 * max(1.0, abs(value))
    for n in range(topo.num_es):
        assert np.all(np.abs(edge_aggregate(topo, v, n) - value) <= tol)
    for i in range(topo.num_clients):
        assert np.all(np.abs(client_aggregate(topo, es, i) - value) <= tol)
    assert np.all(np.abs(cloud_aggregate(topo, es) - value) <= tol)


@given(seeds)
def test_operator_coefficients_convex(seed):
    topo = _topology(seed)
    for mat in (topo.edge_matrix(), topo.client_matrix(), topo.lozenge[None, :]):
        assert np.all(mat >= 0)
        assert np.all(np.abs(mat.sum(axis=1) - 1) <= 1e-12)


@given(seeds)
def test_flat_equals_nested(seed):
    rng = np.random.default_rng(seed)
    topo = _topology(seed)
    w = rng.normal(size=(topo.num_clients, 4)) * 10
    assert np.max(np.abs(virtual_global(topo, w) - virtual_global_nested(topo, w))) <= 1e-12 * max(1, np.abs(w).max())


@settings(max_examples=50)
@given(st.floats(0.05, 5), st.floats(1.01, 4), st.integers(1, 6), st.integers(1, 6), st.floats(1e-3, 1e3))
def test_bound_positive_nonincreasing(mu, l_over_mu, E, G, delta0):
    L = mu * l_over_mu
    beta = 2 / mu
    alpha = max(E, 4 * L * beta, beta * mu) * (1 + 1e-9)
    c = ProblemConstants(L=L, mu=mu, sigma_sq=[0.1], H_sq=1.0, gamma=0.2)
    b = theorem1_bound(BoundConfig(c, np.array([1.0]), E, G, beta, alpha, delta0), np.arange(0, 2000, 13))
    assert np.all(b > 0) and np.all(np.diff(b) <= 0)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 400), st.floats(0.1, 50), st.floats(0.1, 50))
def test_overall_time_linear_between_ceilings(E, G, T, rc, re):
    tm = TimeModel(rc, re)
    s = Schedule(E, G, 1)
    same_block = math.ceil(T / E) == math.ceil((T + 1) / E) and math.ceil(T / (E * G)) == math.ceil((T + 1) / (E * G))
    if same_block:
        assert abs(overall_time(T + 1, s, tm) - overall_time(T, s, tm) - 1 / E) <= 1e-9 * overall_time(T, s, tm)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=60), st.integers(2, 8),
       st.floats(1e-4, 0.1))
def test_detector_matches_scan(acc, window, thr):
    curve = [(5 * k, a) for k, a in enumerate(acc)]
    crit = ConvergenceCriterion(thr, window)
    if len(curve) < window:
        return
    got = detect_convergence(curve, crit)
    want = None
    for j in range(window - 1, len(acc)):
        incs = [acc[m] - acc[m - 1] for m in range(j - window + 2, j + 1)]
        if sum(incs) / len(incs) < thr - 1e-15:
            want = curve[j][0]
            break
        if abs(sum(incs) / len(incs) - thr) <= 1e-15:
            return  # too close to the threshold to compare two summation orders
    assert got == want


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(fmt(x)) == x

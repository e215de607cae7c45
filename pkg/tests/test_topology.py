from fractions import Fraction

import numpy as np
import pytest

from hhfl.errors import InvalidSpec
from hhfl.topology import (SingleAssignment, TopologySpec, build_topology, fig3_topology,
                           random_topology_spec, relocate_overlap, to_single_assignment)


def test_fig3_layout_counts(fig3):
    assert fig3.num_clients == 57 and fig3.num_es == 3
    assert fig3.num_links() == 75
    assert [len(c) for c in fig3.coverage] == [25, 25, 25]
    degrees = [len(s) for s in fig3.connectivity]
    assert sum(d > 1 for d in degrees) == 15
    assert sum(d == 2 for d in degrees) == 12
    assert sum(d == 3 for d in degrees) == 3


def test_fig3_lozenge_is_one_third(fig3):
    # (14 + 8/2 + 3/3) / 57 = 19/57
    exact = [sum(Fraction(1, 57) / len(fig3.connectivity[i]) for i in members) for members in fig3.coverage]
    assert exact == [Fraction(1, 3)] * 3
    np.testing.assert_allclose(fig3.lozenge, 1 / 3, rtol=0, atol=1e-15)


def test_single_es_degenerate():
    topo = build_topology(TopologySpec(2, 1, ((0,), (0,))))
    assert topo.lozenge.tolist() == [1.0]
    assert topo.p.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("conn, num_es, msg", [
    (((0,), ()), 1, "empty connectivity"),
    (((0,), (0,)), 2, "ES 1 covers no clients"),
    (((0,), (3,)), 2, "outside"),
])
def test_invalid_specs(conn, num_es, msg):
    with pytest.raises(InvalidSpec, match=msg):
        build_topology(TopologySpec(len(conn), num_es, conn))


def test_nonpositive_weight_rejected():
    with pytest.raises(InvalidSpec, match="nonpositive"):
        build_topology(TopologySpec(2, 1, ((0,), (0,)), data_weights=(1.0, 0.0)))


def test_spec_round_trip():
    spec = fig3_topology()
    assert TopologySpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("seed", range(6))
def test_fig3_single_assignment_balanced(fig3, seed):
    sa = to_single_assignment(fig3, seed)
    assert sa.counts() == [19, 19, 19]
    regions = {}
    for i, s in enumerate(fig3.connectivity):
        if len(s) > 1:
            regions.setdefault(s, []).append(sa.assigned_es[i])
    for region, picks in regions.items():
        counts = [picks.count(n) for n in region]
        assert max(counts) - min(counts) <= 1
    members = sa.members()
    assert sorted(i for m in members for i in m) == list(range(57))


def test_single_assignment_is_pure(fig3):
    assert to_single_assignment(fig3, 3).assigned_es == to_single_assignment(fig3, 3).assigned_es


def test_single_coverage_identity():
    spec = TopologySpec(4, 2, ((0,), (1,), (1,), (0,)))
    topo = build_topology(spec)
    for seed in range(5):
        assert to_single_assignment(topo, seed).assigned_es == (0, 1, 1, 0)


def test_assignment_outside_set_rejected(fig3):
    bad = [s[0] for s in fig3.connectivity]
    bad[0] = 2
    with pytest.raises(InvalidSpec):
        SingleAssignment(fig3, tuple(bad))


def test_matrices_are_convex_combinations(fig3):
    np.testing.assert_allclose(fig3.edge_matrix().sum(axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(fig3.client_matrix().sum(axis=1), 1.0, atol=1e-15)


def test_as_topology_is_single_coverage(fig3):
    t = to_single_assignment(fig3, 0).as_topology()
    assert t.num_links() == 57


@pytest.mark.parametrize("target", [0, 10, 21, 40])
def test_relocate_overlap_keeps_home(fig3, target):
    sa = to_single_assignment(fig3, 1)
    spec = relocate_overlap(fig3.spec, sa.assigned_es, target, 1)
    topo = build_topology(spec)
    assert sum(len(s) > 1 for s in spec.connectivity) == target
    SingleAssignment(topo, sa.assigned_es)  # home association still valid


def test_random_specs_validate(rng):
    for _ in range(50):
        spec = random_topology_spec(rng)
        topo = build_topology(spec)
        assert abs(topo.lozenge.sum() - 1) < 1e-12

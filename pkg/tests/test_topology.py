import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_diffusion.errors import (ConstraintError, ParameterError, PreconditionError, ResourceGuardError,
                                       StructuralError)
from adaptive_diffusion.topology import (NetworkTopology, build_standard_topology, check_assumption_a1,
                                         cheeger_constant, consensus_residual, gram_path, graph_period,
                                         laplacian_gap, random_symmetric_doubly_stochastic,
                                         spectral_constant_s, topology_from_config)

CYCLE3 = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
HALF2 = np.full((2, 2), 0.5)


class TestNetworkTopology:
    def test_directed_edges_match_support(self):
        top = NetworkTopology(CYCLE3)
        assert top.directed_edges == frozenset({(0, 1), (1, 2), (2, 0)})

    def test_rejects_non_square(self):
        with pytest.raises(StructuralError):
            NetworkTopology(np.ones((2, 3)))

    def test_rejects_negative_entries(self):
        with pytest.raises(StructuralError):
            NetworkTopology(np.array([[1.5, -0.5], [0.5, 0.5]]))

    def test_adjacency_is_read_only(self):
        top = NetworkTopology(HALF2)
        with pytest.raises(ValueError):
            top.adjacency[0, 0] = 1.0


class TestAssumptionCheck:
    def test_identity_is_reducible(self):
        rep = check_assumption_a1(np.eye(3))
        assert rep.doubly_stochastic and not rep.irreducible and not rep.a1

    def test_complete_uniform_passes_everything(self):
        rep = check_assumption_a1(build_standard_topology("complete_uniform", 4))
        assert rep.doubly_stochastic and rep.irreducible and rep.aperiodic and rep.gram_irreducible and rep.a1

    def test_three_cycle_is_periodic(self):
        rep = check_assumption_a1(CYCLE3)
        assert rep.doubly_stochastic and rep.irreducible and not rep.aperiodic
        assert rep.period == 3
        assert rep.a1_prime and not rep.a1

    def test_period_of_two_cycle_with_chord(self):
        # cycles 0-1-0 (length 2) and 0-1-2-0 (length 3): gcd 1
        support = np.array([[0, 1, 0], [1, 0, 1], [1, 0, 0]], dtype=bool)
        assert graph_period(support) == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.randoms(use_true_random=False))
    def test_verdicts_invariant_under_permutation(self, n, rnd):
        rng = np.random.default_rng(rnd.randint(0, 2**32 - 1))
        support = rng.random((n, n)) < 0.4
        a = support * rng.random((n, n))
        perm = rng.permutation(n)
        base = check_assumption_a1(a).as_dict()
        moved = check_assumption_a1(a[np.ix_(perm, perm)]).as_dict()
        for key in ("doubly_stochastic", "irreducible", "aperiodic", "gram_irreducible", "period", "A1"):
            assert base[key] == moved[key]


class TestStandardTopologies:
    def test_single_node_ring(self):
        np.testing.assert_array_equal(build_standard_topology("ring_self_loops", 1).adjacency, [[1.0]])

    def test_complete_uniform_entries(self):
        np.testing.assert_array_equal(build_standard_topology("complete_uniform", 4).adjacency, np.full((4, 4), 0.25))

    def test_ring_of_three(self):
        a = build_standard_topology("ring_self_loops", 3, self_weight=0.5).adjacency
        expected = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
        np.testing.assert_allclose(a, expected, atol=0)
        assert build_standard_topology("ring_self_loops", 3).doubly_stochastic

    def test_metropolis_path(self):
        top = build_standard_topology("metropolis", 3, edges=[(0, 1), (1, 2)])
        expected = np.array([[2 / 3, 1 / 3, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.0, 1 / 3, 2 / 3]])
        np.testing.assert_allclose(top.adjacency, expected, atol=1e-15)

    def test_disconnected_metropolis_is_rejected(self):
        with pytest.raises(ConstraintError):
            build_standard_topology("metropolis", 4, edges=[(0, 1), (2, 3)])

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            build_standard_topology("star", 3)

    @pytest.mark.parametrize("kind", ["ring_self_loops", "complete_uniform", "metropolis"])
    @pytest.mark.parametrize("n", [2, 3, 5, 10])
    def test_defaults_pass_assumptions_and_reach_consensus(self, kind, n):
        params = {"edges": [(i, i + 1) for i in range(n - 1)]} if kind == "metropolis" else {}
        top = build_standard_topology(kind, n, **params)
        assert check_assumption_a1(top).a1
        assert consensus_residual(top, 512) < 1e-8

    def test_from_config_matrix(self):
        top = topology_from_config({"matrix": [0.5, 0.5, 0.5, 0.5]})
        np.testing.assert_array_equal(top.adjacency, HALF2)

    def test_from_config_reports_negative_entry_position(self):
        with pytest.raises(StructuralError, match=r"\[0\]\[1\]"):
            topology_from_config({"matrix": [1.5, -0.5, 0.5, 0.5]})


class TestSpectral:
    def test_gap_single_node(self):
        assert laplacian_gap(NetworkTopology([[1.0]])) == 0.0

    def test_gap_two_nodes(self):
        assert laplacian_gap(NetworkTopology(HALF2)) == pytest.approx(1.0, abs=1e-12)

    def test_gap_complete_four(self):
        assert laplacian_gap(build_standard_topology("complete_uniform", 4)) == pytest.approx(1.0, abs=1e-12)

    def test_gap_needs_symmetry(self):
        with pytest.raises(PreconditionError):
            laplacian_gap(NetworkTopology(CYCLE3))

    def test_cheeger_two_nodes(self):
        assert cheeger_constant(NetworkTopology(HALF2)) == pytest.approx(0.5)

    def test_cheeger_single_node(self):
        assert cheeger_constant(NetworkTopology([[1.0]])) == math.inf

    def test_cheeger_complete_four(self):
        # cut sizes k = 1, 2 give k(4 - k)/4 / min(k, 4 - k) = 3/4 and 1/2
        top = build_standard_topology("complete_uniform", 4)
        h = cheeger_constant(top)
        assert h == pytest.approx(0.5)
        assert laplacian_gap(top) >= h**2 / 2

    def test_cheeger_resource_guard(self):
        with pytest.raises(ResourceGuardError):
            cheeger_constant(build_standard_topology("complete_uniform", 21))

    def test_s_two_nodes(self):
        assert spectral_constant_s(NetworkTopology(HALF2), 1).s_symmetric == pytest.approx(3.125e-4, rel=1e-12)

    def test_s_complete_three(self):
        s = spectral_constant_s(build_standard_topology("complete_uniform", 3), 1).s_symmetric
        assert s == pytest.approx(1.0 / (3 * 32 * 3 * 25), rel=1e-12)

    def test_s_single_node_sentinel(self):
        with pytest.warns(UserWarning):
            rep = spectral_constant_s(NetworkTopology([[1.0]]), 1)
        assert rep.degenerate and rep.s_symmetric == 1.0

    def test_symmetric_mode_needs_positive_diagonal(self):
        a = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        with pytest.raises(PreconditionError):
            spectral_constant_s(NetworkTopology(a), 1, mode="symmetric")
        rep = spectral_constant_s(NetworkTopology(a), 1)
        assert rep.s_symmetric is None and 0 < rep.s_generic_bound < 1

    def test_generic_bound_complete_two(self):
        # A'A = A for the 2-node average; walk (0, 1), q = 2, weakest link 0.5
        rep = spectral_constant_s(NetworkTopology(HALF2), 1)
        assert rep.path == (0, 1)
        assert rep.s_generic_bound == pytest.approx(0.5 * 0.5 / (512 * 1 * 16 * 2 * 5))

    def test_gram_path_visits_nodes_in_order(self):
        top = build_standard_topology("ring_self_loops", 5)
        walk = gram_path(top)
        gram = top.adjacency.T @ top.adjacency
        assert all(gram[u, v] > 0 for u, v in zip(walk, walk[1:]))
        firsts = [walk.index(i) for i in range(5)]
        assert firsts == sorted(firsts)

    @pytest.mark.parametrize("h", [1, 2, 3])
    def test_constants_in_unit_interval(self, h):
        rng = np.random.default_rng(h)
        for _ in range(20):
            top = random_symmetric_doubly_stochastic(int(rng.integers(2, 7)), rng)
            rep = spectral_constant_s(top, h)
            assert 0 < rep.s_symmetric < 1 and 0 < rep.s_generic_bound < 1

    def test_cheeger_inequality_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            top = random_symmetric_doubly_stochastic(int(rng.integers(2, 9)), rng, density=rng.uniform(0.2, 1.0))
            assert top.doubly_stochastic and top.symmetric
            assert laplacian_gap(top) >= cheeger_constant(top) ** 2 / 2 - 1e-9

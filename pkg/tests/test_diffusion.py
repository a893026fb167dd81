import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_diffusion.diffusion import (GainPolicy, NetworkState, NodeState, diffusion_update, error_recursion,
                                          error_vector, individual_rls_step, rls_gain, rm_gain, step)
from adaptive_diffusion.errors import ContractError, ParameterError, StructuralError
from adaptive_diffusion.topology import NetworkTopology, build_standard_topology, random_symmetric_doubly_stochastic

HALF2 = NetworkTopology(np.full((2, 2), 0.5))


class TestGains:
    def test_scalar_rls(self):
        gain, next_p, denom = rls_gain(np.eye(1), np.ones(1))
        assert gain[0] == 0.5 and next_p[0, 0] == 0.5 and denom == 2.0

    def test_zero_regressor(self):
        p = np.array([[2.0, 0.3], [0.3, 1.0]])
        gain, next_p, _ = rls_gain(p, np.zeros(2))
        np.testing.assert_array_equal(gain, 0.0)
        np.testing.assert_array_equal(next_p, p)

    def test_two_dimensional_rls(self):
        gain, next_p, _ = rls_gain(np.eye(2), np.ones(2))
        np.testing.assert_allclose(gain, [1 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(next_p, [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]], atol=1e-15)
        np.testing.assert_allclose(next_p, np.linalg.inv(np.eye(2) + np.ones((2, 2))), atol=1e-15)

    def test_indefinite_p_is_a_contract_violation(self):
        with pytest.raises(ContractError):
            rls_gain(-np.eye(1), np.ones(1) * 2)

    def test_rm_first_step(self):
        np.testing.assert_array_equal(rm_gain(0, 0.75, [1.0, 0.0]), [0.5, 0.0])

    def test_rm_zero_regressor(self):
        np.testing.assert_array_equal(rm_gain(5, 0.75, [0.0, 0.0]), [0.0, 0.0])

    def test_rm_second_step(self):
        value = rm_gain(1, 0.6, [2.0, 0.0])[0]
        assert value == pytest.approx(2.0 / (2**0.6 * 5.0), rel=1e-15)
        assert value == pytest.approx(0.4 * np.exp(-0.6 * np.log(2.0)), rel=1e-15)
        assert value == pytest.approx(0.26390, abs=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.51, 0.99), st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=4))
    def test_rm_gain_norm_bound(self, k, beta, phi):
        assert np.linalg.norm(rm_gain(k, beta, phi)) <= 1.0 / (2.0 * (k + 1) ** beta) + 1e-15

    def test_policy_validation(self):
        with pytest.raises(ParameterError):
            GainPolicy.robbins_monro(0.5)
        with pytest.raises(ParameterError):
            GainPolicy("newton")
        with pytest.raises(ParameterError):
            GainPolicy.robbins_monro(0.8).check_alpha(0.25)
        GainPolicy.robbins_monro(0.7).check_alpha(0.25)


class TestRecursiveInformation:
    def test_p_matches_direct_inverse_over_random_steps(self):
        rng = np.random.default_rng(0)
        n, m = 3, 3
        p = np.broadcast_to(np.eye(m), (n, m, m)).copy()
        gram = np.broadcast_to(np.eye(m), (n, m, m)).copy()
        for _ in range(1000):
            phi = rng.standard_normal((n, m)) * rng.choice([0.0, 0.1, 1.0, 10.0])
            _, p, _ = rls_gain(p, phi)
            gram += np.einsum("ni,nj->nij", phi, phi)
            assert np.max(np.abs(p - p.swapaxes(1, 2))) <= 1e-9
            np.linalg.cholesky(p)
        assert np.max(np.abs(p - np.linalg.inv(gram))) <= 1e-8

    def test_p_eigenvalues_never_increase(self):
        rng = np.random.default_rng(1)
        p = np.eye(2)
        prev = np.linalg.eigvalsh(p)
        for _ in range(200):
            _, p, _ = rls_gain(p, rng.standard_normal(2))
            cur = np.linalg.eigvalsh(p)
            assert np.all(cur <= prev + 1e-12) and cur[-1] <= 1.0 + 1e-12
            prev = cur

    def test_log_determinant_tracks_information(self):
        rng = np.random.default_rng(2)
        net = NetworkState.initial(2, 2)
        top = HALF2
        for _ in range(50):
            net = step(net, top, rng.standard_normal((2, 2)), rng.standard_normal(2))
        np.testing.assert_allclose(net.logdet, -np.linalg.slogdet(net.p)[1], rtol=1e-10)


class TestStep:
    def test_identity_combination_reduces_to_individual_rls(self):
        rng = np.random.default_rng(3)
        net = NetworkState.initial(1, 2)
        node = NodeState(np.zeros(2), np.eye(2), 0.0)
        top = NetworkTopology(np.eye(1))
        for _ in range(100):
            phi, y = rng.standard_normal(2), rng.standard_normal()
            net = step(net, top, phi[None], [y])
            node = individual_rls_step(node, phi, y)
            # the network path multiplies by the 1x1 weight, so allow rounding
            np.testing.assert_allclose(net.theta[0], node.theta_hat, rtol=0, atol=1e-14)
            np.testing.assert_allclose(net.p[0], node.p_matrix, rtol=0, atol=1e-14)

    def test_fixed_point_without_noise(self):
        rng = np.random.default_rng(4)
        theta = np.array([1.0, -2.0])
        top = build_standard_topology("ring_self_loops", 4)
        net = NetworkState.initial(4, 2, theta0=theta)
        for _ in range(50):
            phi = rng.standard_normal((4, 2))
            net = step(net, top, phi, phi @ theta)
        np.testing.assert_allclose(net.theta, np.tile(theta, (4, 1)), atol=1e-14)

    def test_one_step_by_hand(self):
        net = NetworkState.initial(2, 1)
        net = step(net, HALF2, [[1.0], [0.0]], [1.0, 0.0])
        np.testing.assert_allclose(net.theta[:, 0], [0.25, 0.25])

    def test_atc_and_cta_agree_without_combination(self):
        rng = np.random.default_rng(5)
        top = NetworkTopology(np.eye(3))
        atc = NetworkState.initial(3, 2, strategy="atc")
        cta = NetworkState.initial(3, 2, strategy="cta")
        for _ in range(100):
            phi, y = rng.standard_normal((3, 2)), rng.standard_normal(3)
            atc, cta = step(atc, top, phi, y), step(cta, top, phi, y)
        np.testing.assert_array_equal(atc.theta, cta.theta)

    def test_cta_combines_before_adapting(self):
        net = NetworkState.initial(2, 1, strategy="cta", theta0=[[0.0], [2.0]])
        net = step(net, HALF2, [[1.0], [0.0]], [3.0, 0.0])
        # combine -> (1, 1); node 0 adapts with gain 1/2 on residual 2
        np.testing.assert_allclose(net.theta[:, 0], [2.0, 1.0])

    def test_unknown_strategy(self):
        with pytest.raises(ParameterError):
            NetworkState.initial(2, 1, strategy="gossip")

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            step(NetworkState.initial(3, 1), HALF2, np.zeros((3, 1)), np.zeros(3))

    def test_overflow_freezes_trajectory(self):
        policy = GainPolicy("custom", table=np.full((5, 1, 1), 1e150))
        net = NetworkState.initial(1, 1, policy=policy)
        top = NetworkTopology(np.eye(1))
        for _ in range(3):
            net = step(net, top, [[1e150]], [1e150])
        assert net.overflow and net.overflow_step == 0 and net.k == 3
        np.testing.assert_array_equal(net.theta, 0.0)

    @pytest.mark.parametrize("strategy", ["atc", "cta"])
    def test_batched_update_matches_single(self, strategy):
        rng = np.random.default_rng(6)
        a = build_standard_topology("complete_uniform", 3).adjacency
        theta = rng.standard_normal((4, 3, 2))
        p = np.broadcast_to(np.eye(2), (4, 3, 2, 2)).copy()
        phi, y = rng.standard_normal((4, 3, 2)), rng.standard_normal((4, 3))
        policy = GainPolicy.robbins_monro(0.7)
        batch = diffusion_update(theta, p, np.zeros((4, 3)), 2, phi, y, a, policy, strategy)[0]
        for b in range(4):
            single = diffusion_update(theta[b], p[b], np.zeros(3), 2, phi[b], y[b], a, policy, strategy)[0]
            np.testing.assert_allclose(batch[b], single, rtol=0, atol=1e-15)

    def test_rm_without_information_tracking(self):
        a = HALF2.adjacency
        theta, p = np.zeros((2, 1)), np.ones((2, 1, 1))
        out = diffusion_update(theta, p, np.zeros(2), 0, np.ones((2, 1)), np.ones(2), a,
                               GainPolicy.robbins_monro(0.75), track_information=False)
        np.testing.assert_allclose(out[0], 0.5)
        assert out[1] is p


class TestErrorRecursion:
    def test_atc_step_matches_explicit_recursion(self):
        rng = np.random.default_rng(8)
        n, m = 4, 3
        top = random_symmetric_doubly_stochastic(n, rng)
        theta = rng.standard_normal(m)
        net = NetworkState.initial(n, m, theta0=rng.standard_normal((n, m)))
        worst = 0.0
        for _ in range(100):
            phi, v = rng.standard_normal((n, m)), rng.standard_normal(n)
            predicted = error_recursion(top.adjacency, net.p, phi, error_vector(net, theta), v)
            net = step(net, top, phi, phi @ theta + v)
            worst = max(worst, np.max(np.abs(error_vector(net, theta) - predicted)))
        assert worst <= 1e-10

    def test_rm_step_matches_explicit_recursion_with_gain_table(self):
        rng = np.random.default_rng(9)
        top = build_standard_topology("ring_self_loops", 3)
        theta = np.array([0.5, -1.0])
        policy = GainPolicy.robbins_monro(0.8)
        net = NetworkState.initial(3, 2, policy=policy)
        for k in range(50):
            phi, v = rng.standard_normal((3, 2)), rng.standard_normal(3)
            predicted = error_recursion(top.adjacency, net.p, phi, error_vector(net, theta), v,
                                        gains=rm_gain(k, 0.8, phi))
            net = step(net, top, phi, phi @ theta + v)
            np.testing.assert_allclose(error_vector(net, theta), predicted, atol=1e-12)


class TestErrorVector:
    def test_zero_error(self):
        np.testing.assert_array_equal(error_vector(np.ones((3, 2)), np.ones(2)), np.zeros(6))

    def test_arithmetic(self):
        e = error_vector(np.array([[0.0], [2.0]]), [1.0])
        np.testing.assert_array_equal(e, [-1.0, 1.0])
        assert np.linalg.norm(e) == pytest.approx(np.sqrt(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31))
    def test_norm_invariant_under_node_permutation(self, n, m, seed):
        rng = np.random.default_rng(seed)
        est, theta = rng.standard_normal((n, m)), rng.standard_normal(m)
        perm = rng.permutation(n)
        assert np.linalg.norm(error_vector(est[perm], theta)) == pytest.approx(np.linalg.norm(error_vector(est, theta)))

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            error_vector(np.zeros((2, 2)), np.zeros(3))

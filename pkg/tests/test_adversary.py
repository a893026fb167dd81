import numpy as np
import pytest

from adaptive_diffusion import _exact as ex
from adaptive_diffusion.adversary import (AdversarialSchedule, HyperplaneFamily, SearchParams, amplify,
                                          build_divergent_schedule, exact_checkpoint_values,
                                          exact_mean_trajectory, excite, find_escape, level_after,
                                          mean_trajectory, membership, pivot_node, q0_apply, q3_value,
                                          return_time_d, verify_dd)
from adaptive_diffusion.analysis import schedule_monte_carlo
from adaptive_diffusion.errors import ContractError, ParameterError, PreconditionError, StructuralError
from adaptive_diffusion.topology import NetworkTopology, build_standard_topology

CYCLE3 = NetworkTopology([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
COMPLETE3 = build_standard_topology("complete_uniform", 3)
E1 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]


@pytest.fixture(scope="module")
def schedule():
    return build_divergent_schedule(COMPLETE3, 2, E1, 3, SearchParams(seed=0))


class TestFamily:
    def test_return_time_three_cycle(self):
        assert return_time_d(CYCLE3, 0) == (2, 2)

    def test_return_time_complete(self):
        assert return_time_d(COMPLETE3, 1) == (0, 0)

    def test_level_cycle(self):
        assert [level_after(j, 2) for j in range(6)] == [2, 1, 0, 2, 1, 0]

    def test_coefficients_of_three_cycle(self):
        fam = HyperplaneFamily.build(CYCLE3, 0, 1)
        # b_1 is row 0 of A with the pivot entry zeroed, then b_{l+1} = b_l A
        np.testing.assert_array_equal(fam.b_coeffs, [[0, 1, 0], [0, 0, 1], [1, 0, 0]])

    def test_membership_levels(self):
        fam = HyperplaneFamily.build(build_standard_topology("complete_uniform", 4), 0, 1)
        assert membership([0.0, 1.0, 2.0, 3.0], 0, fam)
        assert not membership([1.0, 1.0, 2.0, 3.0], 0, fam)
        # b_1 = (0, 1/4, 1/4, 1/4): pivot coordinate is ignored
        assert membership([5.0, 1.0, -1.0, 0.0], 1, fam)
        assert not membership([5.0, 1.0, 1.0, 0.0], 1, fam)

    def test_membership_is_exact_for_rationals(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 1)
        c = ex.exact([0.0, 1.0, -1.0])
        assert membership(c, 1, fam, tol=1e-300)
        c[2] = c[2] + ex.Fraction(1, 10**40)
        assert not membership(c, 1, fam, tol=1e-300)

    def test_membership_shape_and_level_errors(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 2)
        with pytest.raises(StructuralError):
            membership(np.zeros(5), 0, fam)
        with pytest.raises(ParameterError):
            membership(np.zeros(6), 5, fam)

    def test_pivot_node(self):
        assert pivot_node([0, 7, 2, 0], 2) == 1
        with pytest.raises(ContractError):
            pivot_node([0, 1, 0, 1], 2)


class TestSearches:
    def test_escape_is_deterministic_and_valid(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 2)
        c = np.array([1.0, 0, 0.3, 0, -0.2, 0])
        blocks = [np.eye(2)] * 3
        z1 = find_escape(c, 1, 0, blocks, COMPLETE3, fam, SearchParams(seed=4), key=2)
        z2 = find_escape(c, 1, 0, blocks, COMPLETE3, fam, SearchParams(seed=4), key=2)
        np.testing.assert_array_equal(z1, z2)
        assert np.linalg.norm(z1) <= np.sqrt(3) + 1e-12
        assert not membership(q0_apply(c, blocks, z1, COMPLETE3), 0, fam)

    def test_escape_precondition(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 2)
        with pytest.raises(ContractError):
            find_escape(np.zeros(6), 0, 0, [np.eye(2)] * 3, COMPLETE3, fam)

    def test_excitation_reaches_information_target(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 2)
        c = np.array([1.0, 0, 0.3, 0, -0.2, 0])
        zs = excite(c, [np.eye(2)] * 3, 10.0, COMPLETE3, fam)
        assert len(zs) == 2
        for i in range(3):
            info = np.eye(2) + sum(np.outer(z[i], z[i]) for z in zs)
            assert np.linalg.eigvalsh(info)[0] > 10.0

    def test_amplification_checked_by_explicit_composition(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 2)
        c = np.array([1.0, 0.0, 0.3, 0.0, 0.0, 0.0])
        v1, v2 = amplify(c, np.eye(2), 1e3, COMPLETE3, fam)
        out = q3_value(c, np.eye(2), v1, v2, COMPLETE3, 0)
        _, target = return_time_d(COMPLETE3, 0)
        assert abs(float(out[target * 2])) > 1e3
        assert not membership(out, fam.d, fam)

    def test_amplification_needs_two_dimensions(self):
        fam = HyperplaneFamily.build(COMPLETE3, 0, 1)
        with pytest.raises(PreconditionError):
            amplify([1.0, 0.3, 0.0], np.eye(1), 1e3, COMPLETE3, fam)


class TestSchedule:
    def test_zero_blocks_is_a_single_escape(self):
        sched = build_divergent_schedule(COMPLETE3, 2, E1, 0)
        assert sched.phis.shape == (1, 3, 2) and sched.checkpoints == [0]
        assert verify_dd(sched)["verdict"]

    def test_rejects_scalar_parameter(self):
        with pytest.raises(PreconditionError):
            build_divergent_schedule(COMPLETE3, 1, [1.0, 0.0, 0.0], 1)

    def test_rejects_reducible_topology(self):
        with pytest.raises(PreconditionError):
            build_divergent_schedule(NetworkTopology(np.eye(2)), 2, [1.0, 0, 0, 0], 1)

    def test_layout(self, schedule):
        assert schedule.block_length == 5
        assert schedule.phis.shape == (16, 3, 2)
        assert schedule.checkpoints == [0, 5, 10, 15]
        assert (schedule.j_star, schedule.d, schedule.target_node) == (0, 0, 0)

    def test_verifier_accepts(self, schedule):
        report = verify_dd(schedule)
        assert report["verdict"] and report["blocks"] == 3
        for block in report["per_block"]:
            assert block["margin_16"] > 1.25
            assert block["lambda_min_gram"] > block["lambda_bound"]

    def test_target_grows_faster_than_quartic(self, schedule):
        values = exact_checkpoint_values(schedule)
        for t in schedule.checkpoints[1:]:
            assert abs(values[t][schedule.target_node * 2]) > 20 * (t + 1) ** 4

    def test_zeroed_amplification_is_rejected(self, schedule):
        broken = AdversarialSchedule.from_dict(schedule.to_dict())
        broken.phis[-1] = 0.0
        broken.phis[-2] = 0.0
        assert not verify_dd(broken)["verdict"]

    def test_truncated_schedule_is_rejected(self, schedule):
        broken = AdversarialSchedule.from_dict(schedule.to_dict())
        broken.phis = broken.phis[:-1]
        assert not verify_dd(broken)["verdict"]

    def test_json_round_trip(self, schedule, tmp_path):
        path = tmp_path / "schedule.json"
        schedule.to_json(path)
        back = AdversarialSchedule.from_json(path)
        np.testing.assert_array_equal(back.phis, schedule.phis)
        assert back.checkpoints == schedule.checkpoints
        assert verify_dd(back)["verdict"]

    def test_builder_and_verifier_agree(self, schedule):
        builder = {c["t"]: np.array(c["R"]) for c in schedule.verification["builder"]["checkpoints"]}
        verifier = verify_dd(schedule)["checkpoint_R"]
        for t, r in builder.items():
            other = np.array(verifier[str(t)])
            assert np.max(np.abs(r - other)) <= 1e-9 * max(1.0, np.max(np.abs(r)))

    def test_float_replay_agrees_early(self, schedule):
        exact = exact_mean_trajectory(schedule.phis, schedule.topology, schedule.e_theta0_error)
        approx, _ = mean_trajectory(schedule.phis, schedule.topology, schedule.e_theta0_error)
        np.testing.assert_allclose(approx[0], ex.to_float(exact[0]), rtol=1e-9)


class TestMeanTrajectory:
    def test_zero_regressors_give_powers_of_a(self):
        a = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        top = NetworkTopology(a)
        e0 = np.array([1.0, -2.0, 4.0])
        traj = exact_mean_trajectory(np.zeros((4, 3, 1)), top, e0)
        for t, r in enumerate(traj):
            np.testing.assert_allclose(ex.to_float(r), np.linalg.matrix_power(a, t + 1) @ e0, atol=1e-15)

    def test_float_and_exact_agree_on_mild_schedules(self):
        rng = np.random.default_rng(0)
        phis = rng.standard_normal((20, 3, 2))
        exact = exact_mean_trajectory(phis, COMPLETE3, E1)
        approx, saturated = mean_trajectory(phis, COMPLETE3, E1)
        assert saturated is None
        np.testing.assert_allclose(approx, [ex.to_float(r) for r in exact], atol=1e-12)


class TestNoisyMonteCarlo:
    def test_two_node_mean_matches_exact_value(self):
        top = NetworkTopology(np.full((2, 2), 0.5))
        sched = build_divergent_schedule(top, 2, [1.0, 0.0, 0.0, 0.0], 3, SearchParams(seed=0))
        assert verify_dd(sched)["verdict"]
        t = 12
        exact = ex.to_float(exact_mean_trajectory(sched.phis, top, sched.e_theta0_error)[t])
        mc = schedule_monte_carlo(sched, 10_000, seed=3, record_steps=[t])
        z = (mc.mean_error[0] - exact) / mc.std_error[0]
        assert np.max(np.abs(z)) < 4.0

    def test_running_maximum_grows(self, schedule):
        mc = schedule_monte_carlo(schedule, 100, seed=1)
        assert mc.fraction_increasing == 1.0

"""Grid value-iteration oracle: closed-form cases, refinement studies, and
structural checks against the declared constants."""

import numpy as np
import pytest

from knnq import (
    OutOfDomainError,
    UnsupportedEnvironmentError,
    ar1_env,
    bellman_residual,
    box_env,
    const_env,
    grid_value_iteration,
    lipschitz_constant,
    load_oracle,
    oracle_eval,
    save_oracle,
    two_arm_env,
    uniform_policy,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestClosedFormCases:
    def test_two_action_one_state_values(self):
        # V = 1 + 0.5 V  =>  V = 2; Q(.,1) = 2, Q(.,0) = 1
        env = two_arm_env()
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.5, tol=1e-12)
        assert np.abs(oracle.Q_table[:, 1] - 2.0).max() <= 1e-9
        assert np.abs(oracle.Q_table[:, 0] - 1.0).max() <= 1e-9
        assert oracle.residual <= 1e-12

    def test_constant_reward_fixed_point(self):
        env = const_env(c=0.7, sigma=0.0, transition="uniform")
        oracle = grid_value_iteration(env, resolution=1 / 32, gamma=0.6, tol=1e-11)
        expected = 0.7 / (1 - 0.6)
        assert np.abs(oracle.Q_table - expected).max() <= 1e-8
        # interpolation preserves the constant anywhere in the box
        for s in (0.0, 0.137, 0.5, 1.0):
            assert oracle_eval(oracle, [s], 1) == pytest.approx(expected, abs=1e-8)

    def test_q_table_bounds(self):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 128, gamma=0.8)
        q_m = env.reward_bound / (1 - 0.8)
        assert oracle.Q_table.min() >= 0.0
        assert oracle.Q_table.max() <= q_m

    def test_richardson_self_convergence(self):
        # halving h moves the values by O(h): the (h/2, h/4) gap must shrink
        # relative to the (h, h/2) gap
        env = box_env(dim=1)
        S = np.linspace(0.05, 0.95, 101)[:, None]
        vals = []
        for n in (64, 128, 256):
            oracle = grid_value_iteration(env, resolution=1 / n, gamma=0.8, tol=1e-10)
            vals.append(np.stack([oracle.eval_batch(S, a) for a in (0, 1)]))
        gap1 = np.abs(vals[1] - vals[0]).max()
        gap2 = np.abs(vals[2] - vals[1]).max()
        assert gap2 <= 0.75 * gap1 + 1e-9


class TestEval:
    def test_node_identity(self):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.7)
        for i in (0, 10, 63):
            s = oracle.centers[i]
            assert oracle_eval(oracle, s, 0) == oracle.Q_table[i, 0]

    def test_midpoint_is_mean_of_nodes_1d(self):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.7)
        mid = 0.5 * (oracle.centers[10, 0] + oracle.centers[11, 0])
        expected = 0.5 * (oracle.Q_table[10, 1] + oracle.Q_table[11, 1])
        assert oracle_eval(oracle, [mid], 1) == pytest.approx(expected, abs=1e-14)

    def test_out_of_domain_raises(self):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 32, gamma=0.7)
        with pytest.raises(OutOfDomainError):
            oracle_eval(oracle, [1.5], 0)

    def test_2d_interpolation_matches_bilinear_oracle(self):
        env = box_env(dim=2)
        oracle = grid_value_iteration(env, resolution=1 / 16, gamma=0.6)
        # hand bilinear interpolation between four neighboring cell centers
        n = oracle.n_cells
        table = oracle.Q_table[:, 0].reshape(n)
        i, j = 4, 7
        fx, fy = 0.25, 0.6
        s = oracle.box_lo + oracle.h * (np.array([i + fx, j + fy]) + 0.5)
        expected = (
            table[i, j] * (1 - fx) * (1 - fy)
            + table[i + 1, j] * fx * (1 - fy)
            + table[i, j + 1] * (1 - fx) * fy
            + table[i + 1, j + 1] * fx * fy
        )
        assert oracle_eval(oracle, s, 0) == pytest.approx(expected, abs=1e-12)

    def test_batch_matches_scalar(self):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.7)
        S = rng(1).random((50, 1))
        batch = oracle.eval_batch(S, 1)
        for i in range(50):
            assert batch[i] == oracle_eval(oracle, S[i], 1)


class TestLipschitzConstant:
    def test_closed_form_example(self):
        env = const_env(c=1.0)
        env = env.__class__(**{**env.__dict__, "reward_lipschitz": 1.0,
                               "kernel_lipschitz_mass": 2.0})
        assert lipschitz_constant(env, 0.5) == pytest.approx(1.0 + 0.5 * 2.0 * 2.0)

    def test_gamma_zero_gives_reward_lipschitz(self):
        env = box_env(dim=1)
        assert lipschitz_constant(env, 0.0) == env.reward_lipschitz

    def test_monotone_in_gamma(self):
        env = box_env(dim=1)
        vals = [lipschitz_constant(env, g) for g in np.linspace(0.0, 0.95, 30)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_oracle_respects_lipschitz_bound(self):
        # structural claim: |Q*(s,a) - Q*(s',a)| <= L ||s - s'|| up to twice
        # the numerical error budget, on all node pairs
        env = box_env(dim=1)
        gamma = 0.8
        tol = 1e-9
        o1 = grid_value_iteration(env, resolution=1 / 256, gamma=gamma, tol=tol)
        o2 = grid_value_iteration(env, resolution=1 / 512, gamma=gamma, tol=tol)
        # Richardson error estimate for a first-order method
        disc = 2.0 * float(np.abs(
            o1.eval_batch(o2.centers, 0) - o2.Q_table[:, 0]).max())
        L = lipschitz_constant(env, gamma)
        x = o1.centers[:, 0]
        dist = np.abs(x[:, None] - x[None, :])
        for a in (0, 1):
            q = o1.Q_table[:, a]
            dq = np.abs(q[:, None] - q[None, :])
            assert np.all(dq <= L * dist + 2 * (tol + disc))


class TestBellmanResidual:
    def test_exact_for_uniform_kernel(self):
        env = two_arm_env()
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.5, tol=1e-12)
        pts = np.linspace(0.1, 0.9, 17)[:, None]
        assert bellman_residual(oracle, env, 0.5, pts) <= 1e-9

    def test_residual_bounded_and_shrinks_with_h(self):
        # quadrature refinement study: residual ~ VI tol + O(h)
        env = box_env(dim=1)
        gamma = 0.7
        pts = np.linspace(0.05, 0.95, 41)[:, None]
        residuals = []
        for n in (64, 128, 256):
            oracle = grid_value_iteration(env, resolution=1 / n, gamma=gamma, tol=1e-10)
            residuals.append(bellman_residual(oracle, env, gamma, pts))
        assert residuals[2] < residuals[0]
        assert residuals[0] <= 1e-10 * (1 + gamma) / (1 - gamma) + 5.0 / 64

    def test_unsupported_env(self):
        env = const_env(transition="identity")
        with pytest.raises(UnsupportedEnvironmentError):
            grid_value_iteration(env, resolution=0.1, gamma=0.5)


class TestUnboundedOracle:
    def test_truncation_box_and_mass(self):
        env = ar1_env()
        pol = uniform_policy(2)
        oracle = grid_value_iteration(env, resolution=0.02, gamma=0.8,
                                      rng=rng(3), policy=pol)
        assert oracle.truncation_box is not None
        lo, hi = oracle.truncation_box
        sd = env.tail_constants["stationary_sd_bound"]
        center = env.tail_constants["stationary_center_bound"]
        assert lo[0] <= -(center + 8 * sd) and hi[0] >= center + 8 * sd
        assert oracle.mass_estimate is not None and oracle.mass_estimate >= 1 - 1e-3
        with pytest.raises(OutOfDomainError):
            oracle_eval(oracle, [hi[0] + 1.0], 0)

    def test_requires_rng_without_box(self):
        env = ar1_env()
        with pytest.raises(ValueError, match="rng"):
            grid_value_iteration(env, resolution=0.05, gamma=0.8)


class TestOracleIo:
    def test_roundtrip(self, tmp_path):
        env = box_env(dim=1)
        oracle = grid_value_iteration(env, resolution=1 / 128, gamma=0.8)
        save_oracle(oracle, tmp_path / "orc")
        back = load_oracle(tmp_path / "orc")
        assert np.array_equal(back.Q_table, oracle.Q_table)
        assert np.array_equal(back.centers, oracle.centers)
        assert back.residual == oracle.residual
        S = rng(2).random((20, 1))
        assert np.array_equal(back.eval_batch(S, 0), oracle.eval_batch(S, 0))

    def test_roundtrip_unbounded(self, tmp_path):
        env = ar1_env()
        oracle = grid_value_iteration(env, resolution=0.05, gamma=0.8, rng=rng(1),
                                      policy=uniform_policy(2))
        save_oracle(oracle, tmp_path / "orc")
        back = load_oracle(tmp_path / "orc")
        assert back.truncation_box is not None
        assert np.allclose(back.truncation_box[0], oracle.truncation_box[0])
        assert back.mass_estimate == oracle.mass_estimate

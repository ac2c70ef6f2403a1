"""Built-in environment contracts: declared constants and assumption checks."""

import numpy as np
import pytest

from knnq import ar1_env, box_env, const_env, make_env, make_policy, two_arm_env


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("env", [box_env(dim=1), box_env(dim=2), ar1_env(), two_arm_env()],
                         ids=["box1d", "box2d", "ar1", "two_arm"])
class TestRewardContract:
    def test_reward_bounded(self, env):
        g = rng(1)
        for _ in range(2000):
            if env.support == "bounded":
                s = g.random(env.dim)
            else:
                s = 3.0 * g.standard_normal(env.dim)
            for a in range(env.num_actions):
                r = float(env.reward_fn(s, a))
                assert 0.0 <= r <= env.reward_bound

    def test_reward_lipschitz_declared_constant(self, env):
        g = rng(2)
        for _ in range(2000):
            if env.support == "bounded":
                s1, s2 = g.random(env.dim), g.random(env.dim)
            else:
                s1, s2 = 2 * g.standard_normal(env.dim), 2 * g.standard_normal(env.dim)
            for a in range(env.num_actions):
                dr = abs(float(env.reward_fn(s1, a)) - float(env.reward_fn(s2, a)))
                dist = float(np.linalg.norm(s1 - s2))
                assert dr <= env.reward_lipschitz * dist + 1e-12


class TestKernelDensity:
    @pytest.mark.parametrize("env,grid_lo,grid_hi", [
        (box_env(dim=1), 0.0, 1.0),
        (ar1_env(), -3.0, 3.0),
        (two_arm_env(), 0.0, 1.0),
    ], ids=["box1d", "ar1", "two_arm"])
    def test_density_integrates_to_one(self, env, grid_lo, grid_hi):
        # quadrature oracle over a fine grid; AR1 integrated over a wide box
        n = 20_001
        if env.name == "ar1":
            grid_lo, grid_hi = -8.0, 8.0
        y = np.linspace(grid_lo, grid_hi, n)[:, None]
        w = (grid_hi - grid_lo) / (n - 1)
        for a in range(env.num_actions):
            for s in ([0.2], [0.8]):
                dens = env.kernel_density(y, np.array(s), a)
                mass = float(np.trapezoid(dens, dx=w))
                assert mass == pytest.approx(1.0, abs=2e-4)

    @pytest.mark.parametrize("env,lo,hi", [
        (box_env(dim=1), 0.0, 1.0),
        (box_env(dim=2), 0.0, 1.0),
        (ar1_env(), -2.0, 2.0),
    ], ids=["box1d", "box2d", "ar1"])
    def test_integrated_lipschitz_mass(self, env, lo, hi):
        # Assumption check in integrated form: the L1 distance between the
        # kernels at s and s' is at most C_p * ||s - s'||, verified by
        # quadrature on a grid of state pairs
        g = rng(3)
        d = env.dim
        if d == 1:
            n = 4001
            y = np.linspace(lo - (3.0 if env.support == "unbounded" else 0.0),
                            hi + (3.0 if env.support == "unbounded" else 0.0), n)[:, None]
            w = (y[-1, 0] - y[0, 0]) / (n - 1)
        else:
            n = 201
            ax = np.linspace(lo, hi, n)
            g1, g2 = np.meshgrid(ax, ax, indexing="ij")
            y = np.stack([g1.reshape(-1), g2.reshape(-1)], axis=-1)
            w = ((hi - lo) / (n - 1)) ** 2
        for _ in range(20):
            s1 = lo + (hi - lo) * g.random(d)
            s2 = lo + (hi - lo) * g.random(d)
            dist = float(np.linalg.norm(s1 - s2))
            for a in range(env.num_actions):
                diff = np.abs(env.kernel_density(y, s1, a) - env.kernel_density(y, s2, a))
                l1 = float(diff.sum() * w)
                assert l1 <= env.kernel_lipschitz_mass * dist + 5e-3

    def test_transition_sampler_matches_density(self):
        # Monte Carlo check: empirical CDF of sampled next states vs the
        # quadrature CDF of the declared density
        env = box_env(dim=1, tau=0.25)
        g = rng(4)
        s = np.array([0.3])
        n = 40_000
        draws = np.array([env.transition_sampler(s, 0, g)[0] for _ in range(n)])
        grid = np.linspace(0, 1, 2001)[:, None]
        dens = env.kernel_density(grid, s, 0)
        cdf = np.cumsum(dens) * (1 / 2000)
        cdf /= cdf[-1]
        for q in (0.1, 0.3, 0.5, 0.7, 0.9):
            emp = float((draws <= q).mean())
            theo = float(np.interp(q, grid[:, 0], cdf))
            assert abs(emp - theo) <= 4.0 / np.sqrt(n) + 2e-3


class TestCatalog:
    def test_make_env_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown environment"):
            make_env("nope")

    def test_make_env_dim_restriction(self):
        with pytest.raises(ValueError, match="1-D"):
            make_env("ar1", dim=2)

    def test_make_policy(self):
        pol = make_policy("uniform", num_actions=3)
        assert pol.num_actions == 3
        with pytest.raises(ValueError, match="unknown policy"):
            make_policy("nope")

    def test_const_env_without_density_flagged(self):
        env = const_env(transition="identity")
        assert env.kernel_density is None

    def test_ar1_tail_constants_documented_unverified(self):
        env = ar1_env()
        assert env.tail_constants is not None
        assert env.tail_constants["verified"] is False

    def test_noise_clip_symmetric_zero_mean(self):
        env = const_env(c=0.0, sigma=1.0, noise_clip=1.5)
        g = rng(8)
        from knnq import step_env

        draws = np.array([step_env(env, [0.5], 0, g)[0] for _ in range(50_000)])
        assert np.abs(draws).max() <= 1.5
        assert abs(draws.mean()) <= 4 * draws.std() / np.sqrt(draws.size)

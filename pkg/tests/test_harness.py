"""Metrics, stationary sampling, rate fitting, and the experiment runner."""

import json
import math

import numpy as np
import pytest

from knnq import (
    ExperimentConfig,
    box_env,
    build_query_grid,
    burn_in_diagnostic,
    choose_k_offline,
    const_env,
    grid_value_iteration,
    rate_fit,
    run_experiment,
    schedule_beta,
    schedule_k_online,
    stationary_samples,
    sup_error,
    two_arm_env,
    uniform_policy,
    weighted_l1_error,
    write_report,
)


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture(scope="module")
def box_oracle():
    return grid_value_iteration(box_env(dim=1), resolution=1 / 128, gamma=0.8)


class TestSupError:
    def test_identity_is_zero(self, box_oracle):
        est = lambda s, a: float(box_oracle.eval_batch(np.asarray(s)[None, :], a)[0])
        pts = build_query_grid(box_oracle.box_lo, box_oracle.box_hi, 40)
        assert sup_error(est, box_oracle, pts).value == 0.0

    def test_constant_offset(self, box_oracle):
        est = lambda s, a: float(box_oracle.eval_batch(np.asarray(s)[None, :], a)[0]) + 0.3
        pts = build_query_grid(box_oracle.box_lo, box_oracle.box_hi, 40)
        assert sup_error(est, box_oracle, pts).value == pytest.approx(0.3, abs=1e-12)

    def test_matches_enumeration_oracle(self, box_oracle):
        # hand loop over points and actions
        g = rng(3)
        table = {}
        def est(s, a):
            key = (round(float(s[0]), 9), a)
            if key not in table:
                table[key] = float(g.standard_normal())
            return table[key]
        pts = [np.array([x]) for x in np.linspace(0.1, 0.9, 9)]
        got = sup_error(est, box_oracle, pts).value
        worst = 0.0
        for s in pts:
            for a in (0, 1):
                truth = float(box_oracle.eval_batch(s[None, :], a)[0])
                worst = max(worst, abs(est(s, a) - truth))
        assert got == pytest.approx(worst, abs=0)

    def test_out_of_domain_points_skipped(self, box_oracle):
        est = lambda s, a: 0.0
        pts = [np.array([0.5]), np.array([2.0]), np.array([-1.0])]
        res = sup_error(est, box_oracle, pts)
        assert res.skipped == 2
        with pytest.raises(ValueError, match="outside"):
            sup_error(est, box_oracle, [np.array([5.0])])


class TestWeightedL1:
    def test_arithmetic_mean_of_per_point_errors(self, box_oracle):
        # two samples with per-sample max errors 0.1 and 0.3 average to 0.2
        pts = [np.array([0.25]), np.array([0.75])]
        offs = {0.25: 0.1, 0.75: 0.3}
        est = lambda s, a: float(box_oracle.eval_batch(np.asarray(s)[None, :], a)[0]) \
            + offs[round(float(s[0]), 9)]
        assert weighted_l1_error(est, box_oracle, pts).value == pytest.approx(0.2, abs=1e-12)

    def test_identity_is_zero(self, box_oracle):
        est = lambda s, a: float(box_oracle.eval_batch(np.asarray(s)[None, :], a)[0])
        pts = [np.array([x]) for x in np.linspace(0.1, 0.9, 11)]
        assert weighted_l1_error(est, box_oracle, pts).value == 0.0

    def test_agrees_with_quadrature_on_uniform_chain(self):
        # the uniform-kernel chain has uniform stationary density on [0,1],
        # so the weighted error of estimator = oracle + 0.2*s is the integral
        # of 0.2*s, which is 0.1
        env = two_arm_env()
        oracle = grid_value_iteration(env, resolution=1 / 64, gamma=0.5)
        est = lambda s, a: float(oracle.eval_batch(np.asarray(s)[None, :], a)[0]) \
            + 0.2 * float(s[0])
        samples = stationary_samples(env, uniform_policy(2), 200, 2000, 3, rng(7))
        got = weighted_l1_error(est, oracle, samples).value
        assert got == pytest.approx(0.1, abs=0.01)

    def test_sup_dominates_weighted_l1(self, box_oracle):
        g = rng(5)
        est = lambda s, a: float(g.standard_normal())
        pts = [np.array([x]) for x in np.linspace(0.05, 0.95, 30)]
        per = []
        sup = sup_error(est, box_oracle, pts).value
        wl1 = weighted_l1_error(est, box_oracle, pts).value
        assert sup >= wl1


class TestStationarySamples:
    def test_identity_chain_degenerate(self):
        env = const_env(transition="identity")
        out = stationary_samples(env, uniform_policy(2), 10, 50, 2, rng(1))
        assert np.all(out == env.initial_state)

    def test_deterministic(self):
        env = box_env(dim=1)
        a = stationary_samples(env, uniform_policy(2), 100, 200, 3, rng(9))
        b = stationary_samples(env, uniform_policy(2), 100, 200, 3, rng(9))
        assert np.array_equal(a, b)

    def test_burn_in_doubling_within_mc_error(self):
        # two-run comparison oracle: doubling burn-in moves the sample mean
        # by no more than a few Monte-Carlo standard errors
        env = box_env(dim=1)
        pol = uniform_policy(2)
        n = 4000
        a = stationary_samples(env, pol, 500, n, 5, rng(11))
        b = stationary_samples(env, pol, 1000, n, 5, rng(12))
        se = math.sqrt(a.var() / n + b.var() / n)
        assert abs(a.mean() - b.mean()) <= 6 * se

    def test_diagnostic_reports(self):
        env = box_env(dim=1)
        d = burn_in_diagnostic(env, uniform_policy(2), 200, 1000, 3, rng(2))
        assert set(d) >= {"mean_gap", "mc_se", "gap_over_se"}
        assert d["gap_over_se"][0] <= 8.0

    def test_validation(self):
        env = box_env(dim=1)
        with pytest.raises(ValueError):
            stationary_samples(env, uniform_policy(2), -1, 10, 1, rng())
        with pytest.raises(ValueError):
            stationary_samples(env, uniform_policy(2), 0, 0, 1, rng())


class TestRateFit:
    def test_two_point_line_exact(self):
        fit = rate_fit([(100, 10.0), (10000, 1.0)])
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)

    def test_flat_line(self):
        fit = rate_fit([(100, 3.0), (1000, 3.0), (10000, 3.0)])
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    def test_synthetic_minus_third_slope(self):
        # synthetic-data oracle: error = 7 T^(-1/3) (1 + U[-0.01, 0.01])
        g = rng(4)
        Ts = [2**i for i in range(10, 18)]
        pts = [(T, 7.0 * T ** (-1 / 3) * (1 + g.uniform(-0.01, 0.01))) for T in Ts]
        fit = rate_fit(pts)
        assert fit.slope == pytest.approx(-1 / 3, abs=0.01)

    def test_nonpositive_error_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            rate_fit([(10, 1.0), (100, 0.0)])

    def test_needs_two_distinct_T(self):
        with pytest.raises(ValueError, match="distinct"):
            rate_fit([(10, 1.0), (10, 2.0)])

    def test_half_width_from_seed_dispersion(self):
        pts, seeds = [], []
        g = rng(8)
        for seed in range(6):
            c = 5.0 * (1 + 0.1 * g.standard_normal())
            for T in (100, 1000, 10000):
                pts.append((T, c * T ** (-0.3)))
                seeds.append(seed)
        fit = rate_fit(pts, seeds=seeds)
        assert fit.slope == pytest.approx(-0.3, abs=0.01)
        # per-seed slopes are all exactly -0.3, so the dispersion collapses
        assert fit.half_width == pytest.approx(0.0, abs=1e-9)


class TestExperimentConfig:
    def test_validation(self):
        base = dict(env_name="box", algorithm="offline",
                    T_grid=[64, 128, 256], gamma_grid=[0.8], seeds=[0])
        ExperimentConfig(**base)
        with pytest.raises(ValueError, match="seeds"):
            ExperimentConfig(**{**base, "seeds": []})
        with pytest.raises(ValueError, match="distinct"):
            ExperimentConfig(**{**base, "T_grid": [64, 64]})
        with pytest.raises(ValueError, match="algorithm"):
            ExperimentConfig(**{**base, "algorithm": "nope"})
        with pytest.raises(ValueError, match="override"):
            ExperimentConfig(**{**base, "k_override": 65})

    def test_from_dict_nested_schema(self):
        cfg = ExperimentConfig.from_dict({
            "env": {"name": "box", "dim": 1, "sigma": 0.3},
            "policy": {"name": "uniform"},
            "algorithm": "online",
            "T_grid": [64, 128, 256],
            "gamma_grid": [0.5],
            "seeds": [1, 2],
            "overrides": {"beta": 0.7},
            "query": {"kind": "grid", "count": 64},
            "oracle": {"resolution": 0.01, "tol": 1e-7},
            "output_dir": "out",
        })
        assert cfg.env_params == {"dim": 1, "sigma": 0.3}
        assert cfg.beta_override == 0.7
        assert cfg.query_count == 64
        assert cfg.oracle_resolution == 0.01
        assert cfg.output_dir == "out"


def small_config(alg="offline", **kw):
    return ExperimentConfig(
        env_name="box", env_params={"dim": 1, "sigma": 0.25}, algorithm=alg,
        T_grid=[64, 128, 256], gamma_grid=[0.5], seeds=[0, 1],
        oracle_resolution=1 / 128, query_count=50, **kw)


class TestRunExperiment:
    def test_record_bookkeeping(self):
        rep = run_experiment(small_config())
        assert len(rep.records) == 3 * 1 * 2
        assert (0.5, "sup_err") in rep.fits

    def test_rerun_identical(self):
        r1 = run_experiment(small_config())
        r2 = run_experiment(small_config())
        assert r1.records == r2.records

    def test_schedule_plumbing(self):
        rep = run_experiment(small_config())
        for r in rep.records:
            assert r.k == choose_k_offline(r.T, 1)
            assert r.beta is None
        rep = run_experiment(small_config(alg="online"))
        for r in rep.records:
            beta = schedule_beta(0.5, 1)
            assert r.beta == beta
            assert r.k == schedule_k_online(r.T, beta, 1)

    def test_trajectories_shared_across_algorithms(self):
        # same (seed, T) means the same data: the offline and online runs are
        # paired by construction
        ro = run_experiment(small_config())
        rn = run_experiment(small_config(alg="online"))
        assert [(r.T, r.seed) for r in ro.records] == [(r.T, r.seed) for r in rn.records]

    def test_flagged_cells_reported(self):
        cfg = small_config(max_sweeps=1)
        rep = run_experiment(cfg)
        assert len(rep.flagged) == len(rep.records)

    def test_cell_error_context(self):
        cfg = small_config(alg="online", beta_override=1.5)
        with pytest.raises(RuntimeError, match=r"T=64, gamma=0.5, seed=0"):
            run_experiment(cfg)

    def test_online_report_carries_warmup(self):
        rep = run_experiment(small_config(alg="online"))
        assert "warmup_threshold" in rep.extra

    def test_write_report_deterministic(self, tmp_path):
        rep1 = run_experiment(small_config())
        rep2 = run_experiment(small_config())
        p1 = write_report(rep1, tmp_path / "a")
        p2 = write_report(rep2, tmp_path / "b")
        rec1 = (tmp_path / "a" / "records.csv").read_bytes()
        rec2 = (tmp_path / "b" / "records.csv").read_bytes()
        assert rec1 == rec2
        s1 = json.loads((tmp_path / "a" / "summary.json").read_text())
        s2 = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert s1["fits"] == s2["fits"]
        header = rec1.decode().splitlines()[0]
        assert header == "env,alg,d,gamma,T,seed,k,beta,sup_err,w_l1_err"
        timing_header = (tmp_path / "a" / "timings.csv").read_text().splitlines()[0]
        assert timing_header == "env,alg,d,gamma,T,seed,runtime_ms"

    def test_oracle_disk_cache(self, tmp_path):
        cfg = small_config()
        run_experiment(cfg, oracle_cache_dir=tmp_path / "cache")
        cached = list((tmp_path / "cache").glob("*.npz"))
        assert len(cached) == 1
        # second run loads from disk (no error, same results)
        rep = run_experiment(cfg, oracle_cache_dir=tmp_path / "cache")
        assert len(rep.records) == 6

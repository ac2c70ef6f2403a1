"""Error metrics, stationary sampling, rate fitting, and experiment orchestration.

A rate experiment sweeps (T, gamma, seed) cells: each cell generates a
trajectory, fits the chosen learner with the prescribed schedules (unless
overridden), and measures errors against a cached grid oracle. Bounded
environments are scored on a regular query grid of about 500*d points;
unbounded ones on a fixed set of stationary samples for both metrics, since
uniform-grid sup error is meaningless on unbounded support. Errors are
reduced to medians across seeds before the log-log fit; per-seed fits give
the slope's dispersion half-width.

Determinism: the trajectory of a cell depends only on (seed, T), never on
gamma or the algorithm, so offline/online and different discounts see
identical data at the same seed. Query sample sets and oracle truncation
rollouts use fixed internal seeds. Data CSVs are byte-identical across
reruns; wall-clock timings go to a separate sidecar.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, NamedTuple, Optional

import numpy as np

from ._util import fmt_float
from .mdp import EnvSpec, Policy, sample_trajectory
from .envs import make_env, make_policy
from .offline import OfflineParams, choose_k_offline, fit_offline
from .online import OnlineParams, replay_trajectory, schedule_beta, warmup_threshold
from .oracle import OracleQ, estimate_truncation_box, grid_value_iteration, load_oracle, save_oracle

__all__ = [
    "MetricResult",
    "sup_error",
    "stationary_samples",
    "weighted_l1_error",
    "burn_in_diagnostic",
    "RateFit",
    "rate_fit",
    "ExperimentConfig",
    "Record",
    "RateReport",
    "run_experiment",
    "write_report",
    "build_query_grid",
    "default_oracle_resolution",
    "build_oracle",
]

# fixed internal seeds: keep query sets and truncation boxes identical across
# configs and reruns
_QUERY_SEED = 91127
_TRUNC_SEED = 46351

RECORD_FIELDS = ["env", "alg", "d", "gamma", "T", "seed", "k", "beta", "sup_err", "w_l1_err"]
SCHEMA_VERSION = "1"


class MetricResult(NamedTuple):
    value: float
    skipped: int  # query points outside the oracle domain


def _pointwise_max_error(estimator: Callable, oracle: OracleQ, points) -> tuple:
    """Per-point max_a |estimator - oracle| over in-domain points, plus the
    skipped count. Both metrics reduce this array."""
    pts = [np.asarray(s, dtype=np.float64) for s in points]
    if not pts:
        raise ValueError("query set must be nonempty")
    kept = [s for s in pts if oracle.in_domain(s)]
    skipped = len(pts) - len(kept)
    if not kept:
        raise ValueError("all query points fall outside the oracle domain")
    S = np.stack(kept)
    per_point = np.zeros(len(kept))
    for a in range(oracle.num_actions):
        truth = oracle.eval_batch(S, a)
        est = np.array([estimator(s, a) for s in kept])
        np.maximum(per_point, np.abs(est - truth), out=per_point)
    return per_point, skipped


def sup_error(estimator: Callable, oracle: OracleQ, query_set) -> MetricResult:
    """Max over query points and actions of |estimator(s, a) - oracle(s, a)|."""
    per_point, skipped = _pointwise_max_error(estimator, oracle, query_set)
    return MetricResult(float(per_point.max()), skipped)


def weighted_l1_error(estimator: Callable, oracle: OracleQ, samples) -> MetricResult:
    """Mean over samples of max_a |estimator(s, a) - oracle(s, a)|.

    Samples drawn from the stationary distribution make this the Monte-Carlo
    form of the stationary-weighted L1 error. Out-of-domain samples are
    skipped and counted; all skipped is an error.
    """
    per_point, skipped = _pointwise_max_error(estimator, oracle, samples)
    return MetricResult(float(per_point.mean()), skipped)


def stationary_samples(env: EnvSpec, policy: Policy, burn_in: int, n: int, thin: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Run the chain burn_in steps, then record every thin-th state, n in total.

    Only actions and transitions are drawn (no reward noise), so the stream
    is its own deterministic function of the rng seed.
    """
    if burn_in < 0 or n < 1 or thin < 1:
        raise ValueError("need burn_in >= 0, n >= 1, thin >= 1")
    s = env.initial_state.copy()
    out = np.empty((n, env.dim))
    cum = np.cumsum(policy.probs) if policy.probs is not None else None

    def advance(state):
        if cum is not None:
            a = min(int(np.searchsorted(cum, rng.random(), side="right")), policy.num_actions - 1)
        else:
            p = policy.probabilities(state)
            a = min(int(np.searchsorted(np.cumsum(p), rng.random(), side="right")),
                    policy.num_actions - 1)
        return env.transition_sampler(state, a, rng)

    for _ in range(burn_in):
        s = advance(s)
    for i in range(n):
        for _ in range(thin):
            s = advance(s)
        out[i] = s
    return out


def burn_in_diagnostic(env: EnvSpec, policy: Policy, burn_in: int, n: int, thin: int,
                       rng: np.random.Generator) -> dict:
    """Two-run burn-in check: compare per-coordinate sample means at burn_in
    and 2*burn_in. Reports the gap against a Monte-Carlo error scale instead
    of asserting mixing."""
    ss = np.random.SeedSequence([int(rng.integers(1 << 31)), 2 * burn_in])
    r1, r2 = [np.random.default_rng(c) for c in ss.spawn(2)]
    a = stationary_samples(env, policy, burn_in, n, thin, r1)
    b = stationary_samples(env, policy, 2 * burn_in, n, thin, r2)
    gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
    se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / n)
    return {
        "burn_in": burn_in,
        "n": n,
        "thin": thin,
        "mean_gap": [float(x) for x in gap],
        "mc_se": [float(x) for x in se],
        "gap_over_se": [float(g / s) if s > 0 else 0.0 for g, s in zip(gap, se)],
    }


class RateFit(NamedTuple):
    slope: float
    intercept: float
    half_width: float


def rate_fit(points, seeds=None) -> RateFit:
    """OLS of ln(error) on ln(T).

    ``points`` is a sequence of (T, error) with at least two distinct T and
    positive errors. When parallel ``seeds`` labels are given, the half-width
    is 1.96 * std / sqrt(n) over per-seed slopes; otherwise 0.
    """
    pts = [(float(T), float(e)) for T, e in points]
    if any(e <= 0 for _, e in pts):
        raise ValueError("errors must be positive for a log-log fit")
    if len({T for T, _ in pts}) < 2:
        raise ValueError("need at least two distinct T values")
    x = np.log([T for T, _ in pts])
    y = np.log([e for _, e in pts])
    slope, intercept = np.polyfit(x, y, 1)
    half_width = 0.0
    if seeds is not None:
        seeds = list(seeds)
        if len(seeds) != len(pts):
            raise ValueError("seeds must parallel points")
        per_seed = {}
        for s in sorted(set(seeds)):
            rows = [i for i, lab in enumerate(seeds) if lab == s]
            if len({pts[i][0] for i in rows}) >= 2:
                per_seed[s] = float(np.polyfit(x[rows], y[rows], 1)[0])
        if len(per_seed) >= 2:
            vals = np.array(list(per_seed.values()))
            half_width = float(1.96 * vals.std(ddof=1) / math.sqrt(len(vals)))
    return RateFit(float(slope), float(intercept), half_width)


# ---------------------------------------------------------------------------
# Experiment configuration and runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    env_name: str
    algorithm: str  # "offline" | "online"
    T_grid: list
    gamma_grid: list
    seeds: list
    env_params: dict = field(default_factory=dict)
    policy_name: str = "uniform"
    policy_params: dict = field(default_factory=dict)
    k_override: Optional[int] = None
    beta_override: Optional[float] = None
    fix_tol: Optional[float] = None
    max_sweeps: int = 10_000
    norm: str = "l2"
    query_kind: Optional[str] = None  # None -> grid for bounded, stationary otherwise
    query_count: Optional[int] = None
    query_burn_in: int = 2000
    query_thin: int = 10
    oracle_resolution: Optional[float] = None
    oracle_tol: float = 1e-8
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ("offline", "online"):
            raise ValueError("algorithm must be 'offline' or 'online'")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if len(set(self.T_grid)) < 3:
            raise ValueError("T_grid needs at least 3 distinct values for a rate fit")
        if any(T < 1 for T in self.T_grid):
            raise ValueError("all T must be >= 1")
        if any(not 0.0 < g < 1.0 for g in self.gamma_grid):
            raise ValueError("gammas must be in (0, 1)")
        if self.k_override is not None and self.k_override > min(self.T_grid):
            raise ValueError("k override exceeds the smallest T in the grid")
        if self.query_kind not in (None, "grid", "stationary"):
            raise ValueError("query_kind must be 'grid' or 'stationary'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        env = dict(d.get("env", {}))
        pol = dict(d.get("policy", {}))
        ov = d.get("overrides", {})
        q = d.get("query", {})
        orc = d.get("oracle", {})
        return cls(
            env_name=env.pop("name"),
            env_params=env,
            policy_name=pol.pop("name", "uniform"),
            policy_params=pol,
            algorithm=d["algorithm"],
            T_grid=list(d["T_grid"]),
            gamma_grid=list(d["gamma_grid"]),
            seeds=list(d["seeds"]),
            k_override=ov.get("k"),
            beta_override=ov.get("beta"),
            fix_tol=d.get("fix_tol"),
            max_sweeps=d.get("max_sweeps", 10_000),
            norm=d.get("norm", "l2"),
            query_kind=q.get("kind"),
            query_count=q.get("count"),
            query_burn_in=q.get("burn_in", 2000),
            query_thin=q.get("thin", 10),
            oracle_resolution=orc.get("resolution"),
            oracle_tol=orc.get("tol", 1e-8),
            output_dir=d.get("output_dir"),
        )

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Record:
    env: str
    alg: str
    d: int
    gamma: float
    T: int
    seed: int
    k: int
    beta: Optional[float]  # None for the offline algorithm
    sup_err: float
    w_l1_err: float


@dataclass
class RateReport:
    config: ExperimentConfig
    records: list
    medians: dict  # (gamma, metric) -> list of (T, median error)
    fits: dict  # (gamma, metric) -> RateFit
    seed_slopes: dict  # (gamma, metric) -> {seed: slope}
    flagged: list  # (T, gamma, seed) cells with the non-convergence flag
    timings: list  # (T, gamma, seed, runtime_ms)
    extra: dict = field(default_factory=dict)


def default_oracle_resolution(env: EnvSpec, box=None) -> float:
    if env.support == "bounded":
        lo, hi = env.support_box
    else:
        lo, hi = box
    width = float(np.max(np.asarray(hi) - np.asarray(lo)))
    cells = {1: 1024, 2: 48}.get(env.dim, 16)
    return width / cells


def build_query_grid(lo, hi, count: int) -> np.ndarray:
    """Regular grid of about `count` points strictly inside the box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    d = lo.shape[0]
    per_axis = max(2, int(round(count ** (1.0 / d))))
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(per_axis) + 0.5) / per_axis for i in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=-1)


def build_oracle(env: EnvSpec, policy: Policy, gamma: float, resolution: Optional[float] = None,
                 tol: float = 1e-8, cache_dir=None) -> OracleQ:
    """Grid oracle with optional disk caching (expensive oracles computed once)."""
    box = None
    if env.support == "unbounded":
        rng = np.random.default_rng(np.random.SeedSequence([_TRUNC_SEED]))
        box = estimate_truncation_box(env, policy, rng, 100_000)
    if resolution is None:
        resolution = default_oracle_resolution(env, box)
    stem = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        tag = "_".join(f"{k}{v}" for k, v in sorted(env.params.items()))
        stem = os.path.join(
            cache_dir, f"{env.name}_{tag}_g{gamma!r}_h{resolution!r}_tol{tol!r}".replace("/", "-")
        )
        if os.path.exists(stem + ".json") and os.path.exists(stem + ".npz"):
            return load_oracle(stem)
    oracle = grid_value_iteration(env, resolution, gamma, tol=tol, truncation_box=box)
    if stem is not None:
        save_oracle(oracle, stem)
    return oracle


def _cell_rng(seed: int, T: int) -> np.random.Generator:
    # trajectory randomness depends only on (seed, T): same data across
    # algorithms and discounts
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(T)]))


def run_experiment(config: ExperimentConfig, oracle_cache_dir=None) -> RateReport:
    """Sweep all (T, gamma, seed) cells and fit error-vs-T slopes.

    Fully reproducible from the config: reruns produce identical records.
    Module errors are re-raised with the failing cell attached.
    """
    env = make_env(config.env_name, **config.env_params)
    policy = make_policy(config.policy_name, num_actions=env.num_actions, **config.policy_params)
    dim = env.dim

    oracles = {}
    for gamma in config.gamma_grid:
        oracles[gamma] = build_oracle(env, policy, gamma, config.oracle_resolution,
                                      config.oracle_tol, cache_dir=oracle_cache_dir)

    query_kind = config.query_kind or ("grid" if env.support == "bounded" else "stationary")
    extra = {"query_kind": query_kind, "schema_version": SCHEMA_VERSION}
    any_oracle = oracles[config.gamma_grid[0]]
    if query_kind == "grid":
        if env.support != "bounded":
            raise ValueError("grid query sets need a bounded environment")
        count = config.query_count or 500 * dim
        query_points = build_query_grid(any_oracle.box_lo, any_oracle.box_hi, count)
    else:
        count = config.query_count or 2000
        qrng = np.random.default_rng(np.random.SeedSequence([_QUERY_SEED]))
        query_points = stationary_samples(env, policy, config.query_burn_in, count,
                                          config.query_thin, qrng)
        diag_rng = np.random.default_rng(np.random.SeedSequence([_QUERY_SEED, 1]))
        extra["burn_in_diagnostic"] = burn_in_diagnostic(
            env, policy, config.query_burn_in, min(count, 2000), config.query_thin, diag_rng)
    extra["query_count"] = int(query_points.shape[0])
    extra["oracle"] = {
        repr(g): {"residual": oracles[g].residual, "h": [float(x) for x in oracles[g].h],
                  "iterations": oracles[g].iterations,
                  "row_sum_gap": oracles[g].row_sum_gap}
        for g in config.gamma_grid
    }

    records, timings, flagged = [], [], []
    warmups = {}
    traj_cache = {}
    for T in config.T_grid:
        for gamma in config.gamma_grid:
            oracle = oracles[gamma]
            for seed in config.seeds:
                try:
                    key = (T, seed)
                    if key not in traj_cache:
                        traj_cache[key] = sample_trajectory(
                            env, policy, T, env.initial_state, _cell_rng(seed, T))
                    traj = traj_cache[key]
                    t0 = time.perf_counter()
                    if config.algorithm == "offline":
                        k = config.k_override or choose_k_offline(T, dim)
                        params = OfflineParams(k=k, gamma=gamma, max_sweeps=config.max_sweeps,
                                               fix_tol=config.fix_tol, norm=config.norm)
                        model = fit_offline(traj, params)
                        estimator = model.evaluate
                        if not model.converged:
                            flagged.append((T, gamma, seed))
                        beta = None
                        k_report = k
                    else:
                        beta = config.beta_override or schedule_beta(gamma, dim)
                        k_sched = None
                        if config.k_override is not None:
                            k_fixed = int(config.k_override)
                            k_sched = lambda t, _k=k_fixed: _k
                        params = OnlineParams(gamma=gamma, beta=beta, dim=dim,
                                              k_schedule=k_sched, norm=config.norm)
                        learner = replay_trajectory(traj, params)
                        estimator = learner.query
                        k_report = params.k_at(T)
                        warmups.setdefault((T, repr(gamma)), warmup_threshold(
                            T, beta, env.mixing_m, dim))
                    runtime_ms = (time.perf_counter() - t0) * 1000.0
                    per_point, _ = _pointwise_max_error(estimator, oracle, query_points)
                    sup_err = float(per_point.max())
                    wl1_err = float(per_point.mean())
                    records.append(Record(env.name, config.algorithm, dim, gamma, T, seed,
                                          k_report, beta, sup_err, wl1_err))
                    timings.append((T, gamma, seed, runtime_ms))
                except Exception as e:
                    raise RuntimeError(
                        f"experiment cell failed: T={T}, gamma={gamma}, seed={seed}") from e

    expected = len(config.T_grid) * len(config.gamma_grid) * len(config.seeds)
    assert len(records) == expected, "record bookkeeping is broken"

    medians, fits, seed_slopes = {}, {}, {}
    for gamma in config.gamma_grid:
        for metric in ("sup_err", "w_l1_err"):
            med = []
            for T in config.T_grid:
                errs = [getattr(r, metric) for r in records if r.T == T and r.gamma == gamma]
                med.append((T, float(np.median(errs))))
            medians[(gamma, metric)] = med
            slopes = {}
            for seed in config.seeds:
                pts = [(r.T, getattr(r, metric)) for r in records
                       if r.seed == seed and r.gamma == gamma]
                if all(e > 0 for _, e in pts):
                    slopes[seed] = rate_fit(pts).slope
            seed_slopes[(gamma, metric)] = slopes
            if all(e > 0 for _, e in med):
                base = rate_fit(med)
                hw = 0.0
                if len(slopes) >= 2:
                    vals = np.array(list(slopes.values()))
                    hw = float(1.96 * vals.std(ddof=1) / math.sqrt(len(vals)))
                fits[(gamma, metric)] = RateFit(base.slope, base.intercept, hw)
    if warmups:
        extra["warmup_threshold"] = {f"T={k[0]},gamma={k[1]}": v for k, v in warmups.items()}

    return RateReport(config=config, records=records, medians=medians, fits=fits,
                      seed_slopes=seed_slopes, flagged=flagged, timings=timings, extra=extra)


def write_report(report: RateReport, out_dir) -> dict:
    """Write records.csv (deterministic data), timings.csv (wall clock, not
    covered by determinism), and summary.json. Returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "records": os.path.join(out_dir, "records.csv"),
        "timings": os.path.join(out_dir, "timings.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    with open(paths["records"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in report.records:
            w.writerow([
                r.env, r.alg, str(r.d), fmt_float(r.gamma), str(r.T), str(r.seed), str(r.k),
                "" if r.beta is None else fmt_float(r.beta),
                fmt_float(r.sup_err), fmt_float(r.w_l1_err),
            ])
    with open(paths["timings"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["env", "alg", "d", "gamma", "T", "seed", "runtime_ms"])
        for (T, gamma, seed, ms), r in zip(report.timings, report.records):
            w.writerow([r.env, r.alg, str(r.d), fmt_float(gamma), str(T), str(seed),
                        fmt_float(ms)])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": asdict(report.config),
        "fits": {
            f"gamma={g!r},{metric}": {
                "slope": fit.slope, "intercept": fit.intercept, "half_width": fit.half_width,
                "medians": [[int(T), e] for T, e in report.medians[(g, metric)]],
                "per_seed_slopes": {str(s): v for s, v in report.seed_slopes[(g, metric)].items()},
            }
            for (g, metric), fit in report.fits.items()
        },
        "flagged": [[int(T), g, int(s)] for T, g, s in report.flagged],
        "extra": report.extra,
    }
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths

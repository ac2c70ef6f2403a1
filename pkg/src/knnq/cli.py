"""Command-line interface.

Subcommands: simulate, oracle, fit-offline, run-online, evaluate, rate-sweep.
A JSON config file can supply any flag; config values override flags where
both are given. --seed is mandatory for stochastic commands. Exit codes:
0 success, 1 invalid input, 2 a non-convergence flag was raised.

Every data CSV written here is byte-identical when rerun with the same
config and seed; wall-clock timings only ever go to the timings sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from ._util import fmt_float
from .envs import make_env, make_policy
from .harness import (
    ExperimentConfig,
    build_query_grid,
    default_oracle_resolution,
    run_experiment,
    stationary_samples,
    sup_error,
    weighted_l1_error,
    write_report,
)
from .mdp import read_trajectory_csv, sample_trajectory, write_trajectory_csv
from .offline import OfflineParams, choose_k_offline, fit_offline, load_model, save_model
from .online import OnlineParams, load_checkpoint, replay_trajectory, save_checkpoint, schedule_beta
from .oracle import estimate_truncation_box, grid_value_iteration, load_oracle, save_oracle

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    # invalid input exits 1, matching the documented code (argparse default is 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _fail(msg: str) -> "NoReturn":
    print(f"error: {msg}", file=sys.stderr)
    sys.exit(EXIT_INVALID)


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _cfg_override(args, cfg: dict) -> None:
    """Config values override flags. Nested keys: env.*, policy.*, top-level rest."""
    env = cfg.get("env", {})
    if "name" in env:
        args.env = env["name"]
    if "dim" in env:
        args.dim = int(env["dim"])
    if "sigma" in env:
        args.sigma = float(env["sigma"])
    pol = cfg.get("policy", {})
    if "name" in pol:
        args.policy = pol["name"]
    for key in ("seed", "T", "gamma", "k", "beta", "out", "resolution", "tol",
                "fix_tol", "max_sweeps", "norm", "queries", "burn_in", "thin"):
        if key in cfg:
            setattr(args, key.replace("-", "_"), cfg[key])
    args._env_extra = {k: v for k, v in env.items() if k not in ("name", "dim", "sigma")}


def _make_env_from_args(args):
    extra = getattr(args, "_env_extra", {})
    kwargs = dict(extra)
    if args.env == "box":
        kwargs.setdefault("dim", args.dim)
        kwargs.setdefault("sigma", args.sigma)
    elif args.env in ("ar1",):
        kwargs.setdefault("sigma", args.sigma)
    return make_env(args.env, **kwargs)


def _require_seed(args) -> int:
    if args.seed is None:
        _fail("--seed is mandatory for stochastic commands")
    return int(args.seed)


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)]))


# -- subcommand implementations ---------------------------------------------


def _cmd_simulate(args) -> int:
    env = _make_env_from_args(args)
    policy = make_policy(args.policy, num_actions=env.num_actions)
    seed = _require_seed(args)
    if args.T < 1:
        _fail("T must be >= 1")
    traj = sample_trajectory(env, policy, args.T, env.initial_state, _rng(seed))
    write_trajectory_csv(traj, args.out)
    print(f"wrote {args.out}: env={env.name} T={traj.length} d={traj.dim} seed={seed}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    env = _make_env_from_args(args)
    policy = make_policy(args.policy, num_actions=env.num_actions)
    box = None
    if env.support == "unbounded":
        seed = _require_seed(args)
        box = estimate_truncation_box(env, policy, _rng(seed), 100_000)
    resolution = args.resolution or default_oracle_resolution(env, box)
    oracle = grid_value_iteration(env, resolution, args.gamma, tol=args.tol,
                                  truncation_box=box)
    save_oracle(oracle, args.out)
    print(f"wrote {args.out}.npz/.json: env={env.name} gamma={args.gamma} "
          f"cells={oracle.centers.shape[0]} residual={oracle.residual:.3e}")
    return EXIT_OK


def _cmd_fit_offline(args) -> int:
    traj = read_trajectory_csv(args.traj, num_actions=args.num_actions)
    k = args.k or choose_k_offline(traj.length, traj.dim)
    params = OfflineParams(k=k, gamma=args.gamma, max_sweeps=args.max_sweeps,
                           fix_tol=args.fix_tol, norm=args.norm)
    model = fit_offline(traj, params)
    save_model(model, args.out)
    print(f"wrote {args.out}.csv/.json: T={traj.length} k={k} sweeps={model.sweeps_run} "
          f"final_gap={model.final_gap:.3e} converged={model.converged}")
    return EXIT_OK if model.converged else EXIT_NOT_CONVERGED


def _cmd_run_online(args) -> int:
    traj = read_trajectory_csv(args.traj, num_actions=args.num_actions)
    beta = args.beta if args.beta is not None else schedule_beta(args.gamma, traj.dim)
    k_sched = None
    if args.k is not None:
        k_fixed = int(args.k)
        k_sched = lambda t: k_fixed
    params = OnlineParams(gamma=args.gamma, beta=beta, dim=traj.dim,
                          k_schedule=k_sched, norm=args.norm)
    learner = replay_trajectory(traj, params)
    save_checkpoint(learner, args.out)
    print(f"wrote {args.out}.q.csv/.window.csv/.json: t_now={learner.t_now} "
          f"beta={beta!r} watermark={learner.watermark} "
          f"diagnostics={learner.diagnostics}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    oracle = load_oracle(args.oracle)
    if (args.model is None) == (args.checkpoint is None):
        _fail("pass exactly one of --model / --checkpoint")
    exit_code = EXIT_OK
    if args.model is not None:
        if args.traj is None:
            _fail("--model needs --traj (the trajectory it was fit on)")
        traj = read_trajectory_csv(args.traj, num_actions=args.num_actions)
        model = load_model(args.model, traj)
        if not model.converged:
            exit_code = EXIT_NOT_CONVERGED
        estimator = model.evaluate
    else:
        learner = load_checkpoint(args.checkpoint)
        estimator = learner.query
    kind, _, count = args.queries.partition(":")
    count = int(count) if count else 500 * oracle.dim
    if kind == "grid":
        pts = build_query_grid(oracle.box_lo, oracle.box_hi, count)
    elif kind == "stationary":
        seed = _require_seed(args)
        env = _make_env_from_args(args)
        policy = make_policy(args.policy, num_actions=env.num_actions)
        pts = stationary_samples(env, policy, args.burn_in, count, args.thin, _rng(seed))
    else:
        _fail("--queries must look like grid:N or stationary:N")
    sup = sup_error(estimator, oracle, pts)
    wl1 = weighted_l1_error(estimator, oracle, pts)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value", "skipped"])
        w.writerow(["sup_err", fmt_float(sup.value), str(sup.skipped)])
        w.writerow(["w_l1_err", fmt_float(wl1.value), str(wl1.skipped)])
    print(f"wrote {args.out}: sup_err={sup.value:.6g} w_l1_err={wl1.value:.6g} "
          f"skipped={sup.skipped}")
    return exit_code


def _cmd_rate_sweep(args) -> int:
    config = ExperimentConfig.from_json_file(args.config)
    out_dir = args.out or config.output_dir
    if out_dir is None:
        _fail("pass --out or set output_dir in the config")
    report = run_experiment(config, oracle_cache_dir=args.oracle_cache)
    paths = write_report(report, out_dir)
    for (gamma, metric), fit in sorted(report.fits.items()):
        print(f"gamma={gamma} {metric}: slope={fit.slope:.4f} "
              f"+-{fit.half_width:.4f} intercept={fit.intercept:.3f}")
    print(f"wrote {paths['records']}, {paths['timings']}, {paths['summary']}")
    if report.flagged:
        print(f"non-convergence flag raised in {len(report.flagged)} cells", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -- parser wiring -----------------------------------------------------------


def _add_env_flags(p):
    p.add_argument("--env", default="box", help="environment name (box, ar1, two_arm, const)")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.25, help="reward noise std")
    p.add_argument("--policy", default="uniform")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnq", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trajectory CSV")
    _add_env_flags(p)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config; overrides flags")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("oracle", help="build and cache a grid oracle")
    _add_env_flags(p)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--resolution", type=float, help="cell width h (default per env)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, help="required for unbounded envs (truncation rollout)")
    p.add_argument("--out", required=True, help="output stem (.npz + .json)")
    p.add_argument("--config", help="JSON config; overrides flags")
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("fit-offline", help="fit the offline estimator on a trajectory CSV")
    p.add_argument("--traj", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--k", type=int, help="neighbor count (default: offline schedule)")
    p.add_argument("--fix-tol", dest="fix_tol", type=float)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int, default=10_000)
    p.add_argument("--norm", default="l2", choices=["l2", "l1", "linf"])
    p.add_argument("--num-actions", dest="num_actions", type=int)
    p.add_argument("--out", required=True, help="output stem (.csv + .json)")
    p.add_argument("--config", help="JSON config; overrides flags")
    p.set_defaults(fn=_cmd_fit_offline)

    p = sub.add_parser("run-online", help="stream a trajectory CSV through the online learner")
    p.add_argument("--traj", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--beta", type=float, help="window fraction (default: schedule)")
    p.add_argument("--k", type=int, help="constant k override (default: schedule)")
    p.add_argument("--norm", default="l2", choices=["l2", "l1", "linf"])
    p.add_argument("--num-actions", dest="num_actions", type=int)
    p.add_argument("--out", required=True, help="checkpoint stem")
    p.add_argument("--config", help="JSON config; overrides flags")
    p.set_defaults(fn=_cmd_run_online)

    p = sub.add_parser("evaluate", help="metrics for a saved model or checkpoint")
    _add_env_flags(p)
    p.add_argument("--oracle", required=True, help="oracle stem from the oracle command")
    p.add_argument("--model", help="offline model stem")
    p.add_argument("--checkpoint", help="online checkpoint stem")
    p.add_argument("--traj", help="trajectory the offline model was fit on")
    p.add_argument("--num-actions", dest="num_actions", type=int)
    p.add_argument("--queries", default="grid:500", help="grid:N or stationary:N")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=2000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, help="required for stationary queries")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--config", help="JSON config; overrides flags")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("rate-sweep", help="full rate experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--oracle-cache", dest="oracle_cache", help="directory for cached oracles")
    p.set_defaults(fn=_cmd_rate_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) and args.command != "rate-sweep":
        try:
            _cfg_override(args, _load_config(args.config))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            _fail(f"bad config file: {e}")
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

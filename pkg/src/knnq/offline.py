"""Offline nearest-neighbor Q iteration over a complete trajectory.

The estimator keeps a step-value array Q of length T and repeats Jacobi
sweeps of the empirical Bellman operator until the sup-norm change falls
below a tolerance: for every step t, the value of each action at the next
state S_{t+1} is the average of the previous sweep's Q over the k nearest
stored neighbors with that action, and Q(t) becomes the observed reward plus
gamma times the best action value. The operator is a gamma-contraction in
sup norm (averages and the max are non-expansive), so the fixed point is
unique and the stopping rule is justified by the geometric decay.

Neighbor sets never change between sweeps, so they are resolved once into a
sweep plan. For 1-D states the k nearest neighbors of a query are a
contiguous window in coordinate-sorted order; the plan stores window bounds
and each sweep reduces to prefix-sum lookups, with boundary ties resolved
exactly on a slow path. Higher dimensions store explicit neighbor lists.

When an action has no stored samples at all, its action value defaults to
the initialization value 0 and a diagnostic counter records it; when an
action has fewer than k samples, the average runs over the actual count so
it stays a bounded mean.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._util import ceil_schedule, fmt_float
from .mdp import Trajectory, as_state
from .neighbors import NeighborIndex

__all__ = [
    "choose_k_offline",
    "OfflineParams",
    "OfflineModel",
    "SweepPlan",
    "build_sweep_plan",
    "apply_bellman_operator",
    "fit_offline",
    "evaluate_q",
    "save_model",
    "load_model",
]


def choose_k_offline(T: int, d: int) -> int:
    """Neighbor count for the offline schedule: ceil(T^(2/(d+2))), clamped to [1, T]."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    k = ceil_schedule(float(T) ** (2.0 / (d + 2)))
    return max(1, min(k, T))


@dataclass(frozen=True)
class OfflineParams:
    """Fit configuration: neighbor count k, discount, stopping rule, norm.

    ``fix_tol`` is the sup-norm stopping threshold; None defers to the
    documented default 1e-8 * max(1, max|R_t|) / (1 - gamma) at fit time.
    """

    k: int
    gamma: float
    max_sweeps: int = 10_000
    fix_tol: Optional[float] = None
    norm: str = "l2"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.fix_tol is not None and self.fix_tol <= 0.0:
            raise ValueError("fix_tol must be > 0")


class SweepPlan:
    """Precomputed neighbor structure for the per-sweep queries at S_{t+1}.

    ``action_values(Q)`` returns the (T, num_actions) matrix of neighbor
    averages of Q; rows for actions with no samples are 0.
    """

    def __init__(self, T: int, num_actions: int):
        self.T = T
        self.num_actions = num_actions
        self.k = None
        self.missing_action_queries = 0  # (t, a) pairs with an empty action bucket
        self.tie_conflicts = 0
        self._modes = []  # per action: "missing" | "window" | "lists"
        self._data = []

    def action_values(self, Q: np.ndarray) -> np.ndarray:
        out = np.zeros((self.T, self.num_actions))
        for a in range(self.num_actions):
            mode = self._modes[a]
            if mode == "missing":
                continue
            if mode == "window":
                qpos, win_lo, win_hi, divisor, explicit = self._data[a]
                pref = np.concatenate([[0.0], np.cumsum(Q[qpos])])
                sums = pref[win_hi] - pref[win_lo]
                for row, pos in explicit.items():
                    sums[row] = Q[qpos[pos]].sum()
                out[:, a] = sums / divisor
            else:
                nbr, counts = self._data[a]
                vals = np.where(nbr >= 0, Q[np.maximum(nbr, 0)], 0.0)
                out[:, a] = vals.sum(axis=1) / counts
        return out


def _plan_window_1d(plan: SweepPlan, a: int, steps: np.ndarray, coords: np.ndarray,
                    queries: np.ndarray, k: int) -> None:
    """1-D strategy: contiguous coordinate windows plus exact tie repair."""
    n = coords.size
    order = np.argsort(coords, kind="stable")  # stable keeps equal coords in step order
    xs = coords[order]
    qpos = steps[order] - 1
    T = queries.size
    w = min(k, n)
    if w == n:
        win_lo = np.zeros(T, dtype=np.int64)
        win_hi = np.full(T, n, dtype=np.int64)
        plan._modes.append("window")
        plan._data.append((qpos, win_lo, win_hi, float(n), {}))
        return
    p = np.searchsorted(xs, queries)
    lo = np.maximum(p - w, 0)
    hi = np.minimum(p, n - w)
    while True:
        active = np.flatnonzero(lo < hi)
        if active.size == 0:
            break
        mid = (lo[active] + hi[active]) >> 1
        # move right only when the entering right element is strictly closer
        # than the leaving left one: yields the leftmost optimal window
        move = (xs[mid + w] - queries[active]) < (queries[active] - xs[mid])
        lo[active] = np.where(move, mid + 1, lo[active])
        hi[active] = np.where(move, hi[active], mid)
    i = lo
    d_left = queries - xs[i]
    d_right = xs[i + w - 1] - queries
    rho = np.maximum(d_left, d_right)
    left_out = (i > 0) & (queries - xs[np.maximum(i - 1, 0)] == rho)
    right_out = (i + w < n) & (xs[np.minimum(i + w, n - 1)] - queries == rho)
    explicit = {}
    for row in np.flatnonzero(left_out | right_out):
        d_all = np.abs(xs - queries[row])
        r = rho[row]
        core = np.flatnonzero(d_all < r)
        ties = np.flatnonzero(d_all == r)
        need = w - core.size
        tie_steps = qpos[ties]
        chosen = ties[np.argsort(tie_steps, kind="stable")[:need]]
        explicit[int(row)] = np.concatenate([core, chosen])
        plan.tie_conflicts += 1
    win_lo = i
    win_hi = i + w
    plan._modes.append("window")
    plan._data.append((qpos, win_lo.astype(np.int64), win_hi.astype(np.int64), float(w), explicit))


def _plan_lists(plan: SweepPlan, a: int, index: NeighborIndex, queries: np.ndarray,
                k: int, n: int) -> None:
    """General strategy: explicit per-query neighbor lists from the index."""
    T = queries.shape[0]
    kmax = min(k, n)
    nbr = np.full((T, kmax), -1, dtype=np.int64)
    counts = np.empty(T, dtype=np.float64)
    for row in range(T):
        sel, _ = index.select(queries[row], a, k)
        nbr[row, : sel.size] = sel - 1
        counts[row] = sel.size
    plan._modes.append("lists")
    plan._data.append((nbr, counts))


def build_sweep_plan(traj: Trajectory, index: NeighborIndex, k: int,
                     strategy: str = "auto") -> SweepPlan:
    """Resolve the neighbor sets of all sweep queries (S_{t+1}, t = 1..T) once."""
    if strategy not in ("auto", "window1d", "lists"):
        raise ValueError(f"unknown strategy {strategy!r}")
    T = traj.length
    plan = SweepPlan(T, traj.num_actions)
    plan.k = k
    queries = traj.states[1:]  # row t-1 queries S_{t+1}
    use_window = traj.dim == 1 if strategy == "auto" else strategy == "window1d"
    if use_window and traj.dim != 1:
        raise ValueError("window1d strategy requires 1-D states")
    for a in range(traj.num_actions):
        steps, pts = index.points(a)
        if steps.size == 0:
            plan._modes.append("missing")
            plan._data.append(None)
            plan.missing_action_queries += T
            continue
        if use_window:
            _plan_window_1d(plan, a, steps, pts[:, 0], queries[:, 0], k)
        else:
            _plan_lists(plan, a, index, queries, k, steps.size)
    return plan


def apply_bellman_operator(Q_prev: np.ndarray, traj: Trajectory, index: NeighborIndex,
                           params: OfflineParams, plan: Optional[SweepPlan] = None) -> np.ndarray:
    """One Jacobi sweep: Q_next(t) = R_t + gamma * max_a mean(Q_prev over neighbors).

    All reads come from Q_prev, so sweeps commute with partitioning over t.
    Passing a prebuilt plan skips re-resolving the neighbor sets.
    """
    Q_prev = np.asarray(Q_prev, dtype=np.float64)
    if Q_prev.shape != (traj.length,):
        raise ValueError(f"Q_prev must have shape ({traj.length},)")
    if plan is None:
        plan = build_sweep_plan(traj, index, params.k)
    elif plan.k != params.k:
        raise ValueError("plan was built for a different k")
    qvals = plan.action_values(Q_prev)
    return traj.rewards + params.gamma * qvals.max(axis=1)


@dataclass
class OfflineModel:
    """Converged step-value array plus everything needed to evaluate q(s, a).

    Immutable after fitting and safe to share across threads.
    """

    Q: np.ndarray
    trajectory: Trajectory
    index: NeighborIndex
    params: OfflineParams
    sweeps_run: int
    final_gap: float
    converged: bool
    fix_tol: float
    diagnostics: dict = field(default_factory=dict)

    def evaluate(self, s, a: int) -> float:
        return evaluate_q(self, s, a)


def fit_offline(traj: Trajectory, params: OfflineParams) -> OfflineModel:
    """Iterate the Bellman operator from Q = 0 until the sup-norm change
    drops to the tolerance (or max_sweeps, which sets the non-convergence flag)."""
    T = traj.length
    if T < params.k:
        raise ValueError(f"trajectory length {T} is smaller than k = {params.k}")
    tol = params.fix_tol
    if tol is None:
        tol = 1e-8 * max(1.0, float(np.abs(traj.rewards).max())) / (1.0 - params.gamma)
    index = NeighborIndex.from_trajectory(traj, norm=params.norm)
    plan = build_sweep_plan(traj, index, params.k)
    Q = np.zeros(T)
    gap = np.inf
    sweeps = 0
    while sweeps < params.max_sweeps:
        Q_next = traj.rewards + params.gamma * plan.action_values(Q).max(axis=1)
        gap = float(np.abs(Q_next - Q).max())
        Q = Q_next
        sweeps += 1
        if gap <= tol:
            break
    return OfflineModel(
        Q=Q,
        trajectory=traj,
        index=index,
        params=params,
        sweeps_run=sweeps,
        final_gap=gap,
        converged=gap <= tol,
        fix_tol=tol,
        diagnostics={
            "missing_action_queries": plan.missing_action_queries,
            "tie_conflicts": plan.tie_conflicts,
        },
    )


def evaluate_q(model: OfflineModel, s, a: int) -> float:
    """q(s, a): average of Q over the k nearest stored neighbors with action a,
    searched over the full trajectory. No samples for the action -> 0 with a warning."""
    steps, _ = model.index.select(as_state(s, model.trajectory.dim), a, model.params.k)
    if steps.size == 0:
        warnings.warn(f"no stored samples for action {a}; returning 0", stacklevel=2)
        return 0.0
    return float(model.Q[steps - 1].mean())


def save_model(model: OfflineModel, stem) -> None:
    """Write <stem>.csv with rows t,Q and a <stem>.json sidecar of fit metadata."""
    stem = str(stem)
    with open(stem + ".csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Q"])
        for t in range(model.Q.shape[0]):
            w.writerow([str(t + 1), fmt_float(model.Q[t])])
    meta = {
        "k": model.params.k,
        "gamma": model.params.gamma,
        "norm": model.params.norm,
        "max_sweeps": model.params.max_sweeps,
        "fix_tol": model.fix_tol,
        "sweeps_run": model.sweeps_run,
        "final_gap": model.final_gap,
        "converged": model.converged,
        "T": int(model.Q.shape[0]),
        "diagnostics": model.diagnostics,
    }
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(stem, traj: Trajectory) -> OfflineModel:
    """Rebuild a model from save_model output plus the trajectory it was fit on."""
    stem = str(stem)
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    if meta["T"] != traj.length:
        raise ValueError(f"model was fit on T={meta['T']}, trajectory has T={traj.length}")
    Q = np.empty(traj.length)
    with open(stem + ".csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "Q"]:
            raise ValueError(f"unexpected model header: {header}")
        for row in reader:
            Q[int(row[0]) - 1] = float(row[1])
    params = OfflineParams(k=meta["k"], gamma=meta["gamma"], max_sweeps=meta["max_sweeps"],
                           fix_tol=meta["fix_tol"], norm=meta["norm"])
    index = NeighborIndex.from_trajectory(traj, norm=params.norm)
    return OfflineModel(
        Q=Q, trajectory=traj, index=index, params=params,
        sweeps_run=meta["sweeps_run"], final_gap=meta["final_gap"],
        converged=meta["converged"], fix_tol=meta["fix_tol"],
        diagnostics=meta.get("diagnostics", {}),
    )

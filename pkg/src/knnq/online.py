"""Single-pass streaming nearest-neighbor Q estimator.

Each step t evicts stored points before ceil(beta*t), computes the action
values of the revealed next state as averages of Q over the k(t) nearest
in-window neighbors per action (empty window: 0), sets
Q(t) = R_t + gamma * max over actions, and only then inserts (t, S_t, A_t),
so a point participates in the windows of later steps only. Queries between
steps use k at the current step over the live window, which then includes
the just-inserted point.

Early steps necessarily see truncated or empty windows; averages run over
the actual neighbor count and fallbacks return the initialization value 0.
Both situations are tallied in the diagnostics, and ``warmup_threshold``
gives the horizon before which no accuracy should be expected.

A learner is strictly single-writer: steps must be serialized. Queries may
run concurrently with each other but not with a step in progress.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._util import ceil_schedule, fmt_float
from .mdp import Trajectory, as_state
from .neighbors import NeighborIndex

__all__ = [
    "schedule_beta",
    "schedule_k_online",
    "warmup_threshold",
    "OnlineParams",
    "OnlineLearner",
    "online_step",
    "online_query",
    "replay_trajectory",
    "save_checkpoint",
    "load_checkpoint",
]


def schedule_beta(gamma: float, d: int) -> float:
    """Window fraction beta = gamma^((d+2)/(d+3)); increasing in gamma."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    if d < 1:
        raise ValueError("d must be >= 1")
    return gamma ** ((d + 2.0) / (d + 3.0))


def schedule_k_online(t: int, beta: float, d: int) -> int:
    """Neighbor count k(t) = ceil(((1-beta)*t)^(2/(d+2))), at least 1."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    if d < 1:
        raise ValueError("d must be >= 1")
    return max(1, ceil_schedule(((1.0 - beta) * t) ** (2.0 / (d + 2))))


def warmup_threshold(T: int, beta: float, m: int = 1, d: int = 1) -> float:
    """Diagnostic horizon max{3m/(1-beta), (ln^2 T + 1)^((d+2)/2)}.

    Error guarantees do not apply before it; reported in experiment metadata,
    never used to alter updates.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    if m < 1:
        raise ValueError("m must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    log_sq = math.log(T) ** 2
    return max(3.0 * m / (1.0 - beta), (log_sq + 1.0) ** ((d + 2.0) / 2.0))


@dataclass(frozen=True)
class OnlineParams:
    """Streaming configuration: discount, window fraction, neighbor schedule.

    ``k_schedule`` maps the step t to k(t) and must be nondecreasing with
    k(t) >= 1 (enforced at run time); None uses the default schedule with
    this beta and dim.
    """

    gamma: float
    beta: float
    dim: int
    k_schedule: Optional[Callable[[int], int]] = None
    norm: str = "l2"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must be in (0, 1)")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def from_gamma(cls, gamma: float, dim: int, norm: str = "l2") -> "OnlineParams":
        """Parameters with the prescribed schedules for this gamma and dim."""
        return cls(gamma=gamma, beta=schedule_beta(gamma, dim), dim=dim, norm=norm)

    def k_at(self, t: int) -> int:
        if self.k_schedule is not None:
            return int(self.k_schedule(t))
        return schedule_k_online(t, self.beta, self.dim)


class OnlineLearner:
    """Streaming estimator: growing Q array plus a window-evicting index.

    ``collect_window_stats=True`` records, per step, the watermark and the
    min/max neighbor index used, for window-correctness instrumentation.
    """

    def __init__(self, params: OnlineParams, num_actions: int,
                 collect_window_stats: bool = False):
        if num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        self.params = params
        self.num_actions = num_actions
        self.index = NeighborIndex(params.dim, num_actions, norm=params.norm)
        self._q = np.zeros(1024)
        self.t_now = 0
        self._last_k = 0
        self.diagnostics = {"truncated_queries": 0, "empty_action_fallbacks": 0}
        self.window_stats = [] if collect_window_stats else None

    @property
    def Q(self) -> np.ndarray:
        """Step values Q(1..t_now) as a read-only view (position j holds Q(j+1))."""
        v = self._q[: self.t_now]
        v.flags.writeable = False
        return v

    @property
    def watermark(self) -> int:
        return self.index.eviction_watermark

    def _checked_k(self, t: int) -> int:
        k = self.params.k_at(t)
        if k < 1:
            raise ValueError(f"k schedule returned {k} < 1 at t={t}")
        if k < self._last_k:
            raise ValueError(f"k schedule decreased from {self._last_k} to {k} at t={t}")
        self._last_k = k
        return k

    def _neighbor_mean(self, x: np.ndarray, a: int, k: int):
        """(mean of Q over the exact kNN set, neighbor steps); empty -> (0.0, []).

        x must be a validated state array (hot path).
        """
        steps, truncated = self.index._select_raw(x, a, k)
        if steps.size == 0:
            self.diagnostics["empty_action_fallbacks"] += 1
            return 0.0, steps
        if truncated:
            self.diagnostics["truncated_queries"] += 1
        vals = self._q[steps - 1]
        return float(vals.sum()) / vals.size, steps

    def step(self, S_t, A_t: int, R_t: float, S_next, t: Optional[int] = None) -> None:
        """Consume one transition. Steps must arrive in order t = 1, 2, ..."""
        t_expected = self.t_now + 1
        if t is not None and int(t) != t_expected:
            raise ValueError(f"out-of-order step: got t={t}, expected {t_expected}")
        t = t_expected
        s = as_state(S_t, self.params.dim)
        s_next = as_state(S_next, self.params.dim)
        if not 0 <= int(A_t) < self.num_actions:
            raise ValueError(f"action id {A_t} outside [0, {self.num_actions})")
        if not np.isfinite(R_t):
            raise ValueError("reward must be finite")
        cutoff = math.ceil(self.params.beta * t)
        if cutoff > self.index.eviction_watermark:
            self.index.evict_before(cutoff)
        k = self._checked_k(t)
        best = -math.inf
        lo_seen, hi_seen = None, None
        for a in range(self.num_actions):
            val, steps = self._neighbor_mean(s_next, a, k)
            if val > best:
                best = val
            if self.window_stats is not None and steps.size:
                lo = int(steps.min())
                hi = int(steps.max())
                lo_seen = lo if lo_seen is None else min(lo_seen, lo)
                hi_seen = hi if hi_seen is None else max(hi_seen, hi)
        if self._q.shape[0] < t:
            grown = np.zeros(self._q.shape[0] * 2)
            grown[: self.t_now] = self._q[: self.t_now]
            self._q = grown
        self._q[t - 1] = R_t + self.params.gamma * best
        self.index.append_step(t, s, int(A_t))
        self.t_now = t
        if self.window_stats is not None:
            self.window_stats.append((t, cutoff, lo_seen, hi_seen))

    def query(self, s, a: int) -> float:
        """Estimated Q*(s, a) from the live window with k(t_now) neighbors.

        Truncated windows average over the actual count; no sample for the
        action returns 0 with a warning.
        """
        if self.t_now < 1:
            raise ValueError("no steps processed yet")
        s = as_state(s, self.params.dim)
        k = self.params.k_at(self.t_now)
        steps, truncated = self.index.select(s, a, k)
        if steps.size == 0:
            self.diagnostics["empty_action_fallbacks"] += 1
            warnings.warn(f"no stored samples for action {a} in window; returning 0",
                          stacklevel=2)
            return 0.0
        if truncated:
            self.diagnostics["truncated_queries"] += 1
        return float(self._q[steps - 1].mean())


def online_step(learner: OnlineLearner, S_t, A_t: int, R_t: float, S_next,
                t: Optional[int] = None) -> OnlineLearner:
    learner.step(S_t, A_t, R_t, S_next, t=t)
    return learner


def online_query(learner: OnlineLearner, s, a: int) -> float:
    return learner.query(s, a)


def replay_trajectory(traj: Trajectory, params: OnlineParams,
                      collect_window_stats: bool = False) -> OnlineLearner:
    """Feed a stored trajectory through the streaming update."""
    if traj.dim != params.dim:
        raise ValueError(f"trajectory dim {traj.dim} != params dim {params.dim}")
    learner = OnlineLearner(params, traj.num_actions, collect_window_stats)
    states, actions, rewards = traj.states, traj.actions, traj.rewards
    for i in range(traj.length):
        learner.step(states[i], int(actions[i]), float(rewards[i]), states[i + 1])
    return learner


# ---------------------------------------------------------------------------
# Checkpointing: <stem>.q.csv holds t,Q for all processed steps,
# <stem>.window.csv holds the live window points (t, coords, action), and
# <stem>.json carries scalars. Enough to resume a stream mid-flight.
# ---------------------------------------------------------------------------


def save_checkpoint(learner: OnlineLearner, stem) -> None:
    stem = str(stem)
    with open(stem + ".q.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "Q"])
        for t in range(learner.t_now):
            w.writerow([str(t + 1), fmt_float(learner._q[t])])
    d = learner.params.dim
    with open(stem + ".window.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"s{i}" for i in range(d)] + ["a"])
        rows = []
        for a in range(learner.num_actions):
            steps, pts = learner.index.points(a)
            for j in range(steps.size):
                rows.append((int(steps[j]), pts[j], a))
        for t, x, a in sorted(rows, key=lambda row: row[0]):
            w.writerow([str(t)] + [fmt_float(v) for v in x] + [str(a)])
    meta = {
        "t_now": learner.t_now,
        "watermark": learner.watermark,
        "gamma": learner.params.gamma,
        "beta": learner.params.beta,
        "dim": learner.params.dim,
        "norm": learner.params.norm,
        "num_actions": learner.num_actions,
        "k_schedule": "default" if learner.params.k_schedule is None else "custom",
        "last_k": learner._last_k,
        "diagnostics": learner.diagnostics,
    }
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(stem, k_schedule: Optional[Callable[[int], int]] = None) -> OnlineLearner:
    """Rebuild a learner from save_checkpoint output and resume stepping."""
    stem = str(stem)
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    if meta["k_schedule"] == "custom" and k_schedule is None:
        raise ValueError("checkpoint used a custom k schedule; pass k_schedule to resume")
    params = OnlineParams(gamma=meta["gamma"], beta=meta["beta"], dim=meta["dim"],
                          k_schedule=k_schedule, norm=meta["norm"])
    learner = OnlineLearner(params, meta["num_actions"])
    t_now = int(meta["t_now"])
    q = np.zeros(max(1024, t_now))
    with open(stem + ".q.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            q[int(row[0]) - 1] = float(row[1])
    learner._q = q
    learner.t_now = t_now
    learner._last_k = int(meta["last_k"])
    learner.diagnostics = dict(meta["diagnostics"])
    d = params.dim
    with open(stem + ".window.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            t = int(row[0])
            coords = [float(x) for x in row[1 : 1 + d]]
            learner.index.insert(t, coords, int(row[1 + d]))
    learner.index.evict_before(int(meta["watermark"]))
    return learner

"""Domain types for continuous-state MDPs and trajectory generation.

States are plain 1-D float64 numpy arrays of length d. A trajectory is the
sample path S_1, A_1, R_1, ..., S_T, A_T, R_T, S_{T+1} generated by a fixed
behavior policy; both learners consume it. Rewards decompose as the mean
reward plus zero-mean noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._util import fmt_float as _fmt

__all__ = [
    "as_state",
    "StepRecord",
    "Trajectory",
    "Policy",
    "EnvSpec",
    "sample_action",
    "step_env",
    "sample_trajectory",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

_PROB_TOL = 1e-12


def as_state(x, dim: Optional[int] = None) -> np.ndarray:
    """Validate and return a state vector as a float64 array of shape (d,)."""
    if type(x) is np.ndarray and x.dtype == np.float64 and x.ndim == 1 and x.shape[0] <= 4:
        # fast path for low-dimensional states in hot loops
        if dim is not None and x.shape[0] != dim:
            raise ValueError(f"state has dimension {x.shape[0]}, expected {dim}")
        for v in x:
            if not math.isfinite(v):
                raise ValueError("state coordinates must be finite")
        return x
    s = np.asarray(x, dtype=np.float64)
    if s.ndim == 0:
        s = s.reshape(1)
    if s.ndim != 1:
        raise ValueError(f"state must be 1-D, got shape {s.shape}")
    if dim is not None and s.shape[0] != dim:
        raise ValueError(f"state has dimension {s.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("state coordinates must be finite")
    return s


@dataclass(frozen=True)
class StepRecord:
    """One transition: 1-based step index, state, action id, observed reward."""

    t: int
    state: np.ndarray
    action: int
    reward: float

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"step index must be >= 1, got {self.t}")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class Trajectory:
    """Sample path of length T plus the terminal state S_{T+1}.

    Stored columnar for speed: ``states`` holds S_1..S_{T+1} as a (T+1, d)
    array, ``actions`` and ``rewards`` are length-T arrays. The ``steps``
    property materializes StepRecord objects on demand.
    """

    def __init__(self, states, actions, rewards, num_actions: int):
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if states.ndim != 2:
            raise ValueError("states must be a (T+1, d) array")
        T = actions.shape[0]
        if T < 1:
            raise ValueError("trajectory length T must be >= 1")
        if rewards.shape[0] != T or states.shape[0] != T + 1:
            raise ValueError(
                f"inconsistent lengths: {states.shape[0]} states, "
                f"{T} actions, {rewards.shape[0]} rewards"
            )
        if not np.all(np.isfinite(states)):
            raise ValueError("states must be finite")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        if num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        if actions.min() < 0 or actions.max() >= num_actions:
            raise ValueError("action ids out of range")
        self.states = states
        self.actions = actions
        self.rewards = rewards
        self.num_actions = int(num_actions)

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def steps(self) -> list[StepRecord]:
        return [
            StepRecord(t + 1, self.states[t], int(self.actions[t]), float(self.rewards[t]))
            for t in range(self.length)
        ]

    def step(self, t: int) -> StepRecord:
        """Return the StepRecord with 1-based index t."""
        if not 1 <= t <= self.length:
            raise ValueError(f"step index {t} outside 1..{self.length}")
        return StepRecord(t, self.states[t - 1], int(self.actions[t - 1]), float(self.rewards[t - 1]))

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.num_actions == other.num_actions
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


@dataclass(frozen=True)
class Policy:
    """Behavior policy: state -> probability vector, with floor > 0 on every action.

    ``probs`` set (state-independent fast path) takes precedence over
    ``probs_fn``. Immutable after construction; safe for concurrent reads.
    """

    num_actions: int
    floor: float
    probs_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    probs: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        if self.floor <= 0.0:
            raise ValueError("policy floor must be > 0")
        if self.num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        if self.floor * self.num_actions > 1.0 + _PROB_TOL:
            raise ValueError("floor * num_actions exceeds 1")
        if (self.probs is None) == (self.probs_fn is None):
            raise ValueError("exactly one of probs / probs_fn must be given")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            object.__setattr__(self, "probs", p)
            self._check_vector(p)

    def _check_vector(self, p: np.ndarray) -> None:
        if p.shape != (self.num_actions,):
            raise ValueError(f"probability vector has shape {p.shape}, expected ({self.num_actions},)")
        if abs(float(p.sum()) - 1.0) > _PROB_TOL:
            raise ValueError("action probabilities must sum to 1")
        if p.min() < self.floor - _PROB_TOL:
            raise ValueError(f"action probability {p.min()} below declared floor {self.floor}")

    def probabilities(self, s: np.ndarray) -> np.ndarray:
        """Probability vector at state s, validated against the floor."""
        if self.probs is not None:
            return self.probs
        p = np.asarray(self.probs_fn(s), dtype=np.float64)
        self._check_vector(p)
        return p


def sample_action(policy: Policy, s, rng: np.random.Generator) -> int:
    """Draw an action id from policy at state s. Deterministic given the rng state."""
    s = as_state(s)
    p = policy.probabilities(s)
    c = np.cumsum(p)
    a = int(np.searchsorted(c, rng.random(), side="right"))
    return min(a, policy.num_actions - 1)


@dataclass(frozen=True)
class EnvSpec:
    """Environment contract: mean reward, transition kernel, and declared constants.

    ``reward_fn(s, a)`` broadcasts over leading axes of s and returns the mean
    reward r(s, a) in [0, reward_bound]. ``transition_sampler(s, a, rng)``
    draws the next state. Reward noise is Gaussian with std ``noise_sigma``
    (subgaussian parameter sigma^2), optionally clipped symmetrically at
    ``noise_clip`` which preserves the zero mean. ``kernel_density(y, s, a)``
    is the closed-form transition pdf where available (required by the
    oracle), broadcasting over leading axes of y and s.

    Declared constants: ``reward_bound`` R, ``reward_lipschitz`` L_r, and
    ``kernel_lipschitz_mass`` C_p, the integrated Lipschitz mass of the
    kernel. ``mixing_m`` is the mixing-time parameter used only by warm-up
    diagnostics. Immutable and safe for concurrent reads.
    """

    name: str
    dim: int
    num_actions: int
    reward_fn: Callable
    transition_sampler: Callable
    noise_sigma: float
    reward_bound: float
    reward_lipschitz: float
    kernel_lipschitz_mass: float
    support: str  # "bounded" | "unbounded"
    initial_state: np.ndarray
    support_box: Optional[tuple] = None  # (lo, hi) arrays for bounded support
    kernel_density: Optional[Callable] = None
    mixing_m: int = 1
    noise_clip: Optional[float] = None
    tail_constants: Optional[dict] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.num_actions < 1:
            raise ValueError("num_actions must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.support not in ("bounded", "unbounded"):
            raise ValueError("support must be 'bounded' or 'unbounded'")
        if self.support == "bounded" and self.support_box is None:
            raise ValueError("bounded support requires support_box")

    def check_action(self, a: int) -> int:
        a = int(a)
        if not 0 <= a < self.num_actions:
            raise ValueError(f"action id {a} outside [0, {self.num_actions})")
        return a


def _draw_noise(env: EnvSpec, rng: np.random.Generator) -> float:
    if env.noise_sigma == 0.0:
        return 0.0
    w = env.noise_sigma * rng.standard_normal()
    if env.noise_clip is not None:
        # symmetric clip keeps E[W] = 0
        w = min(max(w, -env.noise_clip), env.noise_clip)
    return w


def step_env(env: EnvSpec, s, a: int, rng: np.random.Generator):
    """One environment step: returns (reward, next_state).

    Reward is r(s, a) plus zero-mean noise (exactly r(s, a) when sigma = 0).
    Draw order is fixed (noise first, then transition) so runs are
    reproducible from the seed.
    """
    s = as_state(s, env.dim)
    a = env.check_action(a)
    reward = float(env.reward_fn(s, a)) + _draw_noise(env, rng)
    next_state = as_state(env.transition_sampler(s, a, rng), env.dim)
    return reward, next_state


def sample_trajectory(env: EnvSpec, policy: Policy, T: int, s0, rng: np.random.Generator) -> Trajectory:
    """Generate a T-step trajectory from s0 under the behavior policy.

    Step t uses sample_action then step_env; the terminal state S_{T+1} is
    recorded. Fully reproducible from the rng seed.
    """
    if T < 1:
        raise ValueError(f"trajectory length T must be >= 1, got {T}")
    if policy.num_actions != env.num_actions:
        raise ValueError("policy and environment disagree on the number of actions")
    s = as_state(s0, env.dim)
    states = np.empty((T + 1, env.dim), dtype=np.float64)
    actions = np.empty(T, dtype=np.int64)
    rewards = np.empty(T, dtype=np.float64)
    # state-independent policies presample their action draws; the joint law
    # is unchanged but the realization differs from the probs_fn path at the
    # same seed
    uniform_probs = policy.probs
    if uniform_probs is not None:
        cum = np.cumsum(uniform_probs)
        draws = rng.random(T)
        acts = np.minimum(np.searchsorted(cum, draws, side="right"), policy.num_actions - 1)
    states[0] = s
    # inlined step loop: the Trajectory constructor validates the whole batch
    # at the end, so the per-step checks of step_env are skipped here
    reward_fn, sampler = env.reward_fn, env.transition_sampler
    for i in range(T):
        if uniform_probs is not None:
            a = int(acts[i])
        else:
            a = sample_action(policy, s, rng)
        rewards[i] = float(reward_fn(s, a)) + _draw_noise(env, rng)
        s = sampler(s, a, rng)
        actions[i] = a
        states[i + 1] = s
    return Trajectory(states, actions, rewards, env.num_actions)


# ---------------------------------------------------------------------------
# Trajectory CSV format: header t,s0,...,s{d-1},a,r ; data rows for t=1..T ;
# one final row with t=T+1 carrying only the terminal state coordinates.
# Floats are written shortest-roundtrip so reruns are byte-identical and
# reads are exact.
# ---------------------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path) -> None:
    d = traj.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"s{i}" for i in range(d)] + ["a", "r"])
        for t in range(traj.length):
            row = [str(t + 1)]
            row += [_fmt(x) for x in traj.states[t]]
            row += [str(int(traj.actions[t])), _fmt(traj.rewards[t])]
            w.writerow(row)
        w.writerow([str(traj.length + 1)] + [_fmt(x) for x in traj.states[-1]] + ["", ""])


def read_trajectory_csv(path, num_actions: Optional[int] = None) -> Trajectory:
    """Read a trajectory CSV. num_actions defaults to max(action id) + 1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 4 or header[0] != "t" or header[-2:] != ["a", "r"]:
            raise ValueError(f"unexpected trajectory header: {header}")
        d = len(header) - 3
        states, actions, rewards = [], [], []
        terminal = None
        for row in reader:
            if not row:
                continue
            t = int(row[0])
            coords = [float(x) for x in row[1 : 1 + d]]
            if row[1 + d] == "":
                terminal = coords
                if t != len(actions) + 1:
                    raise ValueError("terminal row index does not follow the last step")
            else:
                if t != len(actions) + 1:
                    raise ValueError(f"non-contiguous step index {t}")
                states.append(coords)
                actions.append(int(row[1 + d]))
                rewards.append(float(row[2 + d]))
    if terminal is None:
        raise ValueError("trajectory CSV is missing the terminal-state row")
    if num_actions is None:
        num_actions = max(actions) + 1
    return Trajectory(np.array(states + [terminal]), actions, rewards, num_actions)

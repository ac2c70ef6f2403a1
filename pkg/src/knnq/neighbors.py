"""Per-action spatial index with exact k-nearest-neighbor queries.

Points are (step index, state) pairs bucketed by action. Queries return the
k nearest stored states for one action, optionally restricted to a half-open
step window [lo, hi), with ties broken by smaller step index. A watermark
supports prefix eviction for the online learner: eviction is logical first
(points below the watermark are excluded immediately) and physical removal
is batched, so query results are indistinguishable either way.

Exactness is the contract: every query must agree with a brute-force scan,
including tie-breaks. Searches are vectorized linear scans over the action
bucket (argpartition selection), which is exact by construction and fast at
the scales this library targets.

Concurrency: after mutations quiesce, concurrent read queries are safe;
insert/evict require exclusive access.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .mdp import as_state

__all__ = ["NeighborIndex", "KnnResult", "distances"]

_GROW = 2  # capacity doubling factor for append buffers


def distances(points: np.ndarray, s: np.ndarray, norm: str) -> np.ndarray:
    """Distances from each row of points to s under the configured norm."""
    diff = points - s
    if norm == "l2":
        if diff.shape[1] == 1:
            return np.abs(diff[:, 0])
        return np.sqrt(np.square(diff).sum(axis=1))
    if norm == "l1":
        return np.abs(diff).sum(axis=1)
    if norm == "linf":
        return np.abs(diff).max(axis=1) if diff.shape[1] > 1 else np.abs(diff[:, 0])
    raise ValueError(f"unknown norm {norm!r}; use 'l2', 'l1' or 'linf'")


class KnnResult(NamedTuple):
    """Query result: step indices sorted by (distance, step), matching distances,
    and whether fewer than k candidates were available."""

    steps: np.ndarray
    dists: np.ndarray
    truncated: bool

    def __len__(self) -> int:
        return len(self.steps)


class _Bucket:
    """Append-friendly storage for one action: steps ascending, parallel coords."""

    def __init__(self, dim: int):
        cap = 16
        self.steps = np.empty(cap, dtype=np.int64)
        self.pts = np.empty((cap, dim), dtype=np.float64)
        self.lo = 0  # first live (non-evicted) slot
        self.hi = 0  # one past last used slot

    @property
    def size(self) -> int:
        return self.hi - self.lo

    def live_steps(self) -> np.ndarray:
        return self.steps[self.lo:self.hi]

    def live_pts(self) -> np.ndarray:
        return self.pts[self.lo:self.hi]

    def append(self, t: int, x: np.ndarray) -> None:
        if self.hi == self.steps.shape[0]:
            new_cap = max(16, self.steps.shape[0] * _GROW)
            steps = np.empty(new_cap, dtype=np.int64)
            pts = np.empty((new_cap, self.pts.shape[1]), dtype=np.float64)
            n = self.size
            steps[:n] = self.steps[self.lo:self.hi]
            pts[:n] = self.pts[self.lo:self.hi]
            self.steps, self.pts = steps, pts
            self.lo, self.hi = 0, n
        self.steps[self.hi] = t
        self.pts[self.hi] = x
        self.hi += 1

    def insert_sorted(self, t: int, x: np.ndarray) -> None:
        if self.hi == self.lo or t > self.steps[self.hi - 1]:
            self.append(t, x)
            return
        # out-of-order insert: rebuild the live slice (rare outside the online
        # append pattern)
        pos = self.lo + int(np.searchsorted(self.live_steps(), t))
        self.steps = np.concatenate(
            [self.steps[self.lo:pos], [t], self.steps[pos:self.hi]])
        self.pts = np.concatenate(
            [self.pts[self.lo:pos], x[None, :], self.pts[pos:self.hi]])
        self.lo, self.hi = 0, self.steps.shape[0]

    def drop_before(self, cutoff: int) -> None:
        self.lo += int(np.searchsorted(self.live_steps(), cutoff, side="left"))
        if self.lo > 0 and self.lo * 2 >= self.hi:
            n = self.size
            self.steps[:n] = self.steps[self.lo:self.hi]
            self.pts[:n] = self.pts[self.lo:self.hi]
            self.lo, self.hi = 0, n


class NeighborIndex:
    """Exact per-action kNN index over (step, state) points."""

    def __init__(self, dim: int, num_actions: int, norm: str = "l2"):
        if dim < 1 or num_actions < 1:
            raise ValueError("dim and num_actions must be >= 1")
        distances(np.zeros((1, dim)), np.zeros(dim), norm)  # validate norm early
        self.dim = dim
        self.num_actions = num_actions
        self.norm = norm
        self.eviction_watermark = 1
        self._buckets = [_Bucket(dim) for _ in range(num_actions)]
        self._max_step = 0

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, entries, dim: Optional[int] = None, num_actions: Optional[int] = None,
              norm: str = "l2") -> "NeighborIndex":
        """Build from (t, state, action) entries. Step indices must be unique."""
        entries = list(entries)
        if dim is None:
            if not entries:
                raise ValueError("cannot infer dim from an empty entry list")
            dim = len(as_state(entries[0][1]))
        if num_actions is None:
            num_actions = max((int(a) for _, _, a in entries), default=0) + 1
        idx = cls(dim, num_actions, norm)
        if not entries:
            return idx
        ts = np.array([int(t) for t, _, _ in entries], dtype=np.int64)
        if np.unique(ts).size != ts.size:
            raise ValueError("duplicate step indices in entries")
        if ts.min() < 1:
            raise ValueError("step indices must be >= 1")
        order = np.argsort(ts, kind="stable")
        for i in order:
            t, s, a = entries[i]
            idx._buckets[idx._check_action(a)].append(int(t), as_state(s, dim))
        idx._max_step = int(ts.max())
        return idx

    @classmethod
    def from_trajectory(cls, traj, norm: str = "l2") -> "NeighborIndex":
        """Index the trajectory's (t, S_t, A_t) points for t = 1..T."""
        idx = cls(traj.dim, traj.num_actions, norm)
        for a in range(traj.num_actions):
            rows = np.flatnonzero(traj.actions == a)
            b = idx._buckets[a]
            n = rows.size
            if n == 0:
                continue
            b.steps = rows.astype(np.int64) + 1
            b.pts = traj.states[rows]
            b.lo, b.hi = 0, n
        idx._max_step = traj.length
        return idx

    # -- mutation ------------------------------------------------------------

    def insert(self, t: int, s, a: int) -> None:
        """Add a point. Rejects duplicate step indices and evicted steps."""
        t = int(t)
        if t < self.eviction_watermark:
            raise ValueError(
                f"step {t} is below the eviction watermark {self.eviction_watermark}")
        x = as_state(s, self.dim)
        a = self._check_action(a)
        for b in self._buckets:
            live = b.live_steps()
            pos = int(np.searchsorted(live, t))
            if pos < live.size and live[pos] == t:
                raise ValueError(f"step {t} already present")
        self._buckets[a].insert_sorted(t, x)
        self._max_step = max(self._max_step, t)

    def append_step(self, t: int, s, a: int) -> None:
        """Insert with a strictly increasing step index (online hot path).

        Monotone t makes the global duplicate scan unnecessary; everything
        else behaves like insert.
        """
        t = int(t)
        if t <= self._max_step:
            raise ValueError(f"append_step needs t > {self._max_step}, got {t}")
        if t < self.eviction_watermark:
            raise ValueError(
                f"step {t} is below the eviction watermark {self.eviction_watermark}")
        if not (isinstance(s, np.ndarray) and s.dtype == np.float64 and s.shape == (self.dim,)):
            s = as_state(s, self.dim)
        self._buckets[self._check_action(a)].append(t, s)
        self._max_step = t

    def evict_before(self, cutoff: int) -> None:
        """Permanently drop all points with t < cutoff; watermark := cutoff."""
        cutoff = int(cutoff)
        if cutoff < self.eviction_watermark:
            raise ValueError(
                f"cutoff {cutoff} below current watermark {self.eviction_watermark}")
        if cutoff == self.eviction_watermark:
            return
        for b in self._buckets:
            b.drop_before(cutoff)
        self.eviction_watermark = cutoff

    # -- queries -------------------------------------------------------------

    def query_knn(self, s, a: int, k: int, window: Optional[tuple] = None) -> KnnResult:
        """k nearest stored points for action a within the step window.

        Returns min(k, available) steps, the k smallest distances, ties by
        smaller step index, sorted by (distance, step). An empty result (with
        the truncated flag set) signals zero candidates; the caller decides
        the fallback.
        """
        x = as_state(s, self.dim)
        pos, d, truncated, b, w0 = self._candidates(x, self._check_action(a), k, window)
        if pos.size == 0:
            return KnnResult(np.empty(0, dtype=np.int64), np.empty(0), True)
        steps = b.steps[w0 + pos]
        order = np.lexsort((steps, d))
        return KnnResult(steps[order], d[order], truncated)

    def knn_radius(self, s, a: int, k: int, window: Optional[tuple] = None) -> float:
        """Distance to the k-th nearest neighbor (max over the returned set).

        NaN signals an empty candidate set, mirroring query_knn's empty result.
        """
        x = as_state(s, self.dim)
        pos, d, _, _, _ = self._candidates(x, self._check_action(a), k, window)
        if pos.size == 0:
            return math.nan
        return float(d.max())

    def select(self, s, a: int, k: int, window: Optional[tuple] = None):
        """Unsorted exact kNN selection: (step array, truncated flag).

        Same set as query_knn, skipping the final ordering; used by the
        learners, whose neighbor averages are order-invariant.
        """
        x = as_state(s, self.dim)
        return self._select_raw(x, self._check_action(a), k, window)

    def _select_raw(self, x: np.ndarray, a: int, k: int, window=None):
        # trusted path: x validated, a checked by the caller
        pos, d, truncated, b, w0 = self._candidates(x, a, k, window)
        if pos.size == 0:
            return pos, True
        return b.steps[w0 + pos], truncated

    # -- helpers -------------------------------------------------------------

    def size(self, a: Optional[int] = None) -> int:
        if a is None:
            return sum(b.size for b in self._buckets)
        return self._buckets[self._check_action(a)].size

    def points(self, a: int):
        """Live (steps, coords) for one action, in step order. Read-only views."""
        b = self._buckets[self._check_action(a)]
        steps, pts = b.live_steps(), b.live_pts()
        steps.flags.writeable = False
        pts.flags.writeable = False
        return steps, pts

    def _check_action(self, a: int) -> int:
        a = int(a)
        if not 0 <= a < self.num_actions:
            raise ValueError(f"action id {a} outside [0, {self.num_actions})")
        return a

    def _candidates(self, x, a, k, window):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        b = self._buckets[a]
        steps = b.live_steps()
        if window is None:
            i0, i1 = 0, steps.size
        else:
            lo, hi = window
            if not lo < hi:
                raise ValueError(f"window [{lo}, {hi}) is empty")
            i0 = int(np.searchsorted(steps, lo, side="left"))
            i1 = int(np.searchsorted(steps, hi, side="left"))
        m = i1 - i0
        if m <= 0:
            return np.empty(0, dtype=np.int64), np.empty(0), True, b, b.lo
        d = distances(b.pts[b.lo + i0:b.lo + i1], x, self.norm)
        if m <= k:
            pos = np.arange(i0, i1)
            return pos, d, m < k, b, b.lo
        part = np.argpartition(d, k - 1)
        rho = d[part[k - 1]]  # pivot sits in final sorted position
        if int(np.count_nonzero(d <= rho)) == k:
            # no tie excluded at the boundary: the k smallest are the exact set
            pos = part[:k]
            return i0 + pos, d[pos], False, b, b.lo
        strict = np.flatnonzero(d < rho)
        need = k - strict.size
        # positions ascend with step index, so the first `need` tied positions
        # are exactly the smallest tied steps
        ties = np.flatnonzero(d == rho)[:need]
        pos = np.concatenate([strict, ties])
        return i0 + pos, d[pos], False, b, b.lo

"""Reservoir sampling with optional jump scheduling, plus quantile estimators.

Two sampling modes share one reservoir type:

* ``standard`` draws one uniform per post-fill element and accepts it with
  probability ``m / t``; an accepted element overwrites a uniformly chosen
  slot (one more draw).
* ``jump`` skips straight to the next write position.  After each write at
  stream index ``t`` the gap to the next write is sampled by inverse
  transform from ``P(gap >= d) = (t / (t + d)) ** m``, so skipped elements
  cost no randomness at all.

The order-statistics estimator (per-batch nearest-rank statistics averaged
over batches) is the baseline that goes wrong on drifting streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from .rng import STREAM_MAIN, STREAM_SLOT, CounterStream

STANDARD = "standard"
JUMP = "jump"
MODES = (STANDARD, JUMP)

FORMAT_NAME = "streamembed.reservoir"
FORMAT_VERSION = 1


class NoDataError(ValueError):
    """Raised when a quantile is requested from an empty sample."""


def nearest_rank_index(alpha: float, n: int) -> int:
    """Zero-based index of ``inf{x : F_n(x) >= alpha}`` in a sorted sample of size n.

    ``alpha * n`` is evaluated exactly on the shortest decimal that
    round-trips ``alpha`` (``0.2`` is read as 1/5), so ``0.3 * 10`` does not
    round up to a fourth rank and ``0.2 * 5`` stays exactly 1.
    """
    if n <= 0:
        raise NoDataError("no data")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    k = math.ceil(Fraction(repr(float(alpha))) * n) - 1
    return min(max(k, 0), n - 1)


def nearest_rank_indices(levels: Sequence[float], n: int) -> np.ndarray:
    return np.array([nearest_rank_index(a, n) for a in levels], dtype=np.int64)


def sample_jump_gap(t: int, m: int, u: float) -> int:
    """Number of elements to skip after a reservoir write at stream index ``t``.

    Computes ``floor(t * (u ** (-1/m) - 1))`` (via ``expm1`` for accuracy
    when ``u`` is close to 1).  The next write then happens at ``t + gap + 1``.

    Raises:
        ValueError: if ``u`` is not strictly inside (0, 1) -- callers must
            draw a fresh variate -- or if ``t < m`` or ``m < 1``.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u!r}; resample")
    if m < 1 or t < m:
        raise ValueError(f"need t >= m >= 1, got t={t}, m={m}")
    return math.floor(t * math.expm1(-math.log(u) / m))


def sample_jump_gaps(t: int, m: int, u: np.ndarray) -> np.ndarray:
    """Vectorised :func:`sample_jump_gap` for a fixed ``(t, m)``."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    if m < 1 or t < m:
        raise ValueError(f"need t >= m >= 1, got t={t}, m={m}")
    return np.floor(t * np.expm1(-np.log(u) / m)).astype(np.int64)


def expected_writes(t: int, m: int) -> float:
    """Exact expected number of reservoir writes, fill phase included."""
    if t <= m:
        return float(t)
    return m * (1.0 + _harmonic(t) - _harmonic(m))


def _harmonic(n: int) -> float:
    if n < 10_000:
        return math.fsum(1.0 / k for k in range(1, n + 1))
    # Asymptotic expansion; error below 1e-17 at this size.
    return math.log(n) + 0.5772156649015329 + 1 / (2 * n) - 1 / (12 * n * n)


@dataclass(frozen=True)
class ReservoirSnapshot:
    """Immutable read view: sorted samples plus the version they came from."""

    sorted_samples: np.ndarray
    version: int
    stream_index: int
    running_min: float
    running_max: float

    @property
    def size(self) -> int:
        return int(self.sorted_samples.shape[0])

    def quantile(self, alpha: float) -> float:
        return float(self.sorted_samples[nearest_rank_index(alpha, self.size)])


class Reservoir:
    """Fixed-capacity uniform sample of a numeric stream.

    ``stream_index`` counts the finite values observed so far.  Non-finite
    values are dropped before they reach the sampler and only bump
    ``dropped``; counting them in ``t`` would break the ``m / t`` inclusion
    law for the finite values.

    ``writes`` counts every reservoir write including the fill phase, so its
    expectation is ``m * (1 + H_t - H_m)``.
    """

    def __init__(self, capacity: int, mode: str = STANDARD, seed: int = 0) -> None:
        if int(capacity) != capacity or capacity < 1:
            raise ValueError(f"capacity must be a positive integer, got {capacity!r}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.capacity = int(capacity)
        self.mode = mode
        self.seed = int(seed)
        self._buf = np.empty(self.capacity, dtype=np.float64)
        self._size = 0
        self.stream_index = 0
        self.next_update = 0
        self.writes = 0
        self.version = 0
        self.dropped = 0
        self.running_min = math.inf
        self.running_max = -math.inf
        self._main = CounterStream(self.seed, STREAM_MAIN)
        self._slot = CounterStream(self.seed, STREAM_SLOT)
        self._sorted: np.ndarray | None = None
        self._sorted_version = -1
        self.sort_count = 0

    def __repr__(self) -> str:
        return (
            f"Reservoir(capacity={self.capacity}, mode={self.mode!r}, "
            f"size={self._size}, stream_index={self.stream_index})"
        )

    def __len__(self) -> int:
        return self._size

    @property
    def samples(self) -> np.ndarray:
        """Retained samples in slot order (a copy)."""
        return self._buf[: self._size].copy()

    @property
    def rng_calls(self) -> int:
        return self._main.draws + self._slot.draws

    @property
    def is_full(self) -> bool:
        return self._size == self.capacity

    # -- updates -----------------------------------------------------------

    def observe(self, x: float) -> None:
        """Feed one stream element."""
        x = float(x)
        if not math.isfinite(x):
            self.dropped += 1
            return
        t = self.stream_index + 1
        self.stream_index = t
        if x < self.running_min:
            self.running_min = x
        if x > self.running_max:
            self.running_max = x
        m = self.capacity
        if self._size < m:
            self._write(self._size, x)
            self._size += 1
            if self.mode == JUMP and self._size == m:
                self._schedule(t)
            return
        if self.mode == STANDARD:
            if self._main.next() < m / t:
                self._write(self._slot_index(), x)
        elif t == self.next_update:
            self._write(self._slot_index(), x)
            self._schedule(t)

    def observe_jump(self, x: float) -> None:
        """Feed one element to a jump-mode reservoir."""
        if self.mode != JUMP:
            raise ValueError("observe_jump requires mode='jump'")
        self.observe(x)

    def extend(self, values: Iterable[float] | np.ndarray) -> None:
        """Feed a block of elements.

        Produces exactly the state that calling :meth:`observe` on each
        element in order would produce, using vectorised draws.
        """
        xs = np.asarray(values, dtype=np.float64).ravel()
        if xs.size == 0:
            return
        finite = np.isfinite(xs)
        if not finite.all():
            self.dropped += int(xs.size - finite.sum())
            xs = xs[finite]
            if xs.size == 0:
                return
        lo, hi = float(xs.min()), float(xs.max())
        if lo < self.running_min:
            self.running_min = lo
        if hi > self.running_max:
            self.running_max = hi

        m = self.capacity
        k = min(m - self._size, xs.size)
        if k > 0:
            self._buf[self._size : self._size + k] = xs[:k]
            self._size += k
            self.stream_index += k
            self.writes += k
            self.version += k
            if self.mode == JUMP and self._size == m:
                self._schedule(self.stream_index)
            xs = xs[k:]
        if xs.size == 0:
            return

        start = self.stream_index
        n = xs.size
        if self.mode == STANDARD:
            t = np.arange(start + 1, start + n + 1, dtype=np.int64)
            accepted = np.flatnonzero(self._main.block(n) < m / t)
            if accepted.size:
                slots = self._slot_indices(self._slot.block(accepted.size))
                # Later writes to the same slot win.
                uniq, first_rev = np.unique(slots[::-1], return_index=True)
                last = accepted.size - 1 - first_rev
                self._buf[uniq] = xs[accepted[last]]
                self.writes += int(accepted.size)
                self.version += int(accepted.size)
        else:
            end = start + n
            while self.next_update <= end:
                t = self.next_update
                self._write(self._slot_index(), float(xs[t - start - 1]))
                self._schedule(t)
        self.stream_index = start + n

    def _write(self, slot: int, x: float) -> None:
        self._buf[slot] = x
        self.writes += 1
        self.version += 1

    def _schedule(self, t: int) -> None:
        self.next_update = t + sample_jump_gap(t, self.capacity, self._main.next()) + 1

    def _slot_index(self) -> int:
        j = int(self._slot.next() * self.capacity)
        return j if j < self.capacity else self.capacity - 1

    def _slot_indices(self, u: np.ndarray) -> np.ndarray:
        return np.minimum((u * self.capacity).astype(np.int64), self.capacity - 1)

    # -- reads -------------------------------------------------------------

    def sorted_samples(self) -> np.ndarray:
        """Sorted read-only copy of the samples, cached until the next write."""
        if self._sorted_version != self.version or self._sorted is None:
            arr = np.sort(self._buf[: self._size])
            arr.setflags(write=False)
            self._sorted = arr
            self._sorted_version = self.version
            self.sort_count += 1
        return self._sorted

    def snapshot(self) -> ReservoirSnapshot:
        return ReservoirSnapshot(
            sorted_samples=self.sorted_samples(),
            version=self.version,
            stream_index=self.stream_index,
            running_min=self.running_min,
            running_max=self.running_max,
        )

    def estimate_quantile(self, alpha: float) -> float:
        """Nearest-rank ``alpha``-quantile of the retained samples.

        Raises:
            NoDataError: if nothing has been retained yet.
        """
        if self._size == 0:
            raise NoDataError("no data: reservoir is empty")
        return self.snapshot().quantile(alpha)

    # -- checkpointing -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        empty = self._size == 0
        return {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "capacity": self.capacity,
            "mode": self.mode,
            "stream_index": self.stream_index,
            "next_update": self.next_update,
            "samples": self._buf[: self._size].tolist(),
            "writes": self.writes,
            "version": self.version,
            "dropped": self.dropped,
            "running_min": None if empty else self.running_min,
            "running_max": None if empty else self.running_max,
            "rng": {
                "seed": self.seed,
                "main_draws": self._main.draws,
                "slot_draws": self._slot.draws,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Reservoir":
        if doc.get("format") != FORMAT_NAME:
            raise ValueError(f"not a reservoir document: format={doc.get('format')!r}")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported reservoir format_version {doc.get('format_version')!r}")
        r = cls(doc["capacity"], doc["mode"], doc["rng"]["seed"])
        samples = np.asarray(doc["samples"], dtype=np.float64)
        if samples.size > r.capacity:
            raise ValueError("more samples than capacity")
        r._buf[: samples.size] = samples
        r._size = int(samples.size)
        r.stream_index = int(doc["stream_index"])
        r.next_update = int(doc["next_update"])
        r.writes = int(doc["writes"])
        r.version = int(doc["version"])
        r.dropped = int(doc["dropped"])
        if doc["running_min"] is not None:
            r.running_min = float(doc["running_min"])
            r.running_max = float(doc["running_max"])
        r._main.draws = int(doc["rng"]["main_draws"])
        r._slot.draws = int(doc["rng"]["slot_draws"])
        return r

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Reservoir":
        return cls.from_dict(json.loads(text))


class OrderStatsEstimator:
    """Mean of per-batch nearest-rank order statistics at fixed levels.

    This is only unbiased when successive batches are i.i.d.; under drift
    it converges to the average of the *local* quantiles instead of the
    global one.
    """

    def __init__(self, levels: Sequence[float]) -> None:
        lv = np.asarray(levels, dtype=np.float64)
        if lv.ndim != 1 or lv.size == 0:
            raise ValueError("levels must be a non-empty 1-d sequence")
        if np.any((lv <= 0.0) | (lv >= 1.0)) or np.any(np.diff(lv) <= 0.0):
            raise ValueError("levels must be strictly increasing inside (0, 1)")
        self.levels = lv
        self._sums = np.zeros(lv.size, dtype=np.float64)
        self.batches_seen = 0
        self.running_min = math.inf
        self.running_max = -math.inf

    @property
    def num_quantiles(self) -> int:
        return int(self.levels.size)

    @property
    def running_means(self) -> np.ndarray:
        if self.batches_seen == 0:
            raise NoDataError("no data: no batches seen")
        return self._sums / self.batches_seen

    def update(self, batch: Iterable[float] | np.ndarray) -> None:
        """Add one batch's order statistics to the running means."""
        xs = np.asarray(batch, dtype=np.float64).ravel()
        xs = xs[np.isfinite(xs)]
        if xs.size == 0:
            raise ValueError("batch must contain at least one finite value")
        xs = np.sort(xs)
        self._sums += xs[nearest_rank_indices(self.levels, xs.size)]
        self.batches_seen += 1
        self.running_min = min(self.running_min, float(xs[0]))
        self.running_max = max(self.running_max, float(xs[-1]))

    def update_stream(self, values: np.ndarray, batch_size: int) -> None:
        """Split ``values`` into consecutive batches and feed them all.

        A trailing partial batch is fed as a smaller batch.
        """
        xs = np.asarray(values, dtype=np.float64).ravel()
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        n_full = xs.size // batch_size
        if n_full and np.isfinite(xs[: n_full * batch_size]).all():
            block = np.sort(xs[: n_full * batch_size].reshape(n_full, batch_size), axis=1)
            ranks = nearest_rank_indices(self.levels, batch_size)
            self._sums += block[:, ranks].sum(axis=0)
            self.batches_seen += n_full
            self.running_min = min(self.running_min, float(block[:, 0].min()))
            self.running_max = max(self.running_max, float(block[:, -1].max()))
        else:
            for i in range(n_full):
                self.update(xs[i * batch_size : (i + 1) * batch_size])
        if xs.size > n_full * batch_size:
            self.update(xs[n_full * batch_size :])

    def boundaries(self) -> np.ndarray:
        """``[running min, level means..., running max]``."""
        return np.concatenate([[self.running_min], self.running_means, [self.running_max]])

"""Quantile tables and thermometer encoding in quantile space.

A :class:`QuantileTable` holds ``M + 1`` non-decreasing boundaries that cut
the estimated distribution into ``M`` equal-mass bins.  Encoding a value
``x`` finds its bin ``j`` (half-open ``[q_j, q_{j+1})``, last bin closed),
interpolates a fraction ``w`` inside the bin, and emits the thermometer
vector ``[1]*j + [w] + [0]*(M-j-1)`` whose sum ``j + w`` is ``M`` times the
estimated CDF at ``x``.

The value-space encoder (distances ``|x - q_i|`` to every boundary) is kept
as the baseline it is compared against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .reservoir import Reservoir, ReservoirSnapshot

FORMAT_NAME = "streamembed.quantile_table"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class QuantileTable:
    boundaries: np.ndarray
    source_version: int = -1

    def __post_init__(self) -> None:
        b = np.array(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("a table needs at least 3 boundaries (M >= 2)")
        if not np.isfinite(b).all():
            raise ValueError("boundaries must be finite")
        if np.any(np.diff(b) < 0):
            raise ValueError("boundaries must be non-decreasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def M(self) -> int:
        return int(self.boundaries.size - 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "M": self.M,
            "boundaries": self.boundaries.tolist(),
            "source_version": self.source_version,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "QuantileTable":
        if doc.get("format") != FORMAT_NAME or doc.get("format_version") != FORMAT_VERSION:
            raise ValueError("not a supported quantile table document")
        table = cls(np.asarray(doc["boundaries"], dtype=np.float64), int(doc["source_version"]))
        if table.M != doc["M"]:
            raise ValueError("M does not match the number of boundaries")
        return table

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QuantileTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ThermometerCode:
    bin_index: int
    fraction: float
    weights: np.ndarray

    @property
    def quantile(self) -> float:
        """Estimated CDF value ``(j + w) / M``."""
        return (self.bin_index + self.fraction) / self.weights.size


def build_table(source: Reservoir | ReservoirSnapshot, M: int) -> QuantileTable:
    """Cut a reservoir sample into ``M`` equal-frequency bins.

    Interior boundaries are ``sorted[floor(j * n / M)]`` for ``j = 1..M-1``;
    the outer two are the running extrema of the whole stream.
    """
    if M < 2:
        raise ValueError(f"M must be at least 2, got {M}")
    snap = source.snapshot() if isinstance(source, Reservoir) else source
    xs = snap.sorted_samples
    n = xs.size
    if n < M:
        raise ValueError(f"reservoir holds {n} samples, need at least M={M}")
    idx = np.arange(1, M) * n // M
    b = np.empty(M + 1, dtype=np.float64)
    b[0] = min(snap.running_min, xs[0])
    b[1:M] = xs[idx]
    b[M] = max(snap.running_max, xs[-1])
    return QuantileTable(b, snap.version)


@dataclass
class TableCache:
    """Rebuilds a reservoir's table only when the reservoir has changed."""

    M: int
    builds: int = 0
    _table: QuantileTable | None = field(default=None, repr=False)

    def get(self, reservoir: Reservoir) -> QuantileTable:
        if self._table is None or self._table.source_version != reservoir.version:
            self._table = build_table(reservoir, self.M)
            self.builds += 1
        return self._table


def _locate(x: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bin index and in-bin fraction for already-clamped inputs."""
    M = b.size - 1
    j = np.searchsorted(b, x, side="right") - 1
    top = j >= M
    j = np.minimum(j, M - 1)
    lo = b[j]
    width = b[j + 1] - lo
    # j < M means b[j] <= x < b[j+1], so the width is positive there.
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(width > 0, (x - lo) / width, 0.0)
    w = np.where(top, 1.0, np.clip(w, 0.0, 1.0))
    return j, w


def encode_many(x: np.ndarray, table: QuantileTable) -> np.ndarray:
    """Thermometer vectors for a batch of inputs, shape ``(n, M)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot encode non-finite values")
    b = table.boundaries
    j, w = _locate(np.clip(x, b[0], b[-1]), b)
    cols = np.arange(table.M)
    out = (cols < j[..., None]).astype(np.float64)
    out += (cols == j[..., None]) * w[..., None]
    return out


def encode(x: float, table: QuantileTable) -> ThermometerCode:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    b = table.boundaries
    j, w = _locate(np.array([min(max(x, b[0]), b[-1])]), b)
    weights = np.zeros(table.M)
    weights[: j[0]] = 1.0
    weights[j[0]] = w[0]
    return ThermometerCode(int(j[0]), float(w[0]), weights)


def quantile_position(x: np.ndarray, table: QuantileTable) -> np.ndarray:
    """Estimated CDF ``(j + w) / M`` implied by the table, vectorised."""
    x = np.asarray(x, dtype=np.float64)
    b = table.boundaries
    j, w = _locate(np.clip(x, b[0], b[-1]), b)
    return (j + w) / table.M


def encode_value_space(x: float | np.ndarray, table: QuantileTable) -> np.ndarray:
    """Distances ``|x - q_i|`` to all ``M + 1`` boundaries."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot encode non-finite values")
    return np.abs(x[..., None] - table.boundaries)

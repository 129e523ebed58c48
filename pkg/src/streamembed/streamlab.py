"""Synthetic drifting streams with analytic ground truth, and the statistics
used to measure estimators against them.

Every generator is piecewise stationary: the stream is cut into
``segments`` consecutive pieces and piece ``i`` draws i.i.d. from its own
distribution.  The population ("aggregate") distribution is therefore an
exact finite mixture, which gives closed-form CDFs and quantiles to
compare estimates against.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import special, stats

from .quantile_codec import QuantileTable, build_table, quantile_position
from .reservoir import JUMP, STANDARD, OrderStatsEstimator, Reservoir

STATIONARY_UNIFORM = "stationary_uniform"
DRIFTING_UNIFORM = "drifting_uniform"
PERIODIC_SHIFT = "periodic_shift"
CLUSTERED_INTEGER = "clustered_integer"
SPREAD_CONTINUOUS = "spread_continuous"
FIELD_CONDITIONAL = "field_conditional"

_DEFAULTS: dict[str, dict[str, Any]] = {
    STATIONARY_UNIFORM: {"a": 0.0, "b": 1.0},
    DRIFTING_UNIFORM: {"a": 0.0, "b": 1.0, "segments": 10},
    PERIODIC_SHIFT: {"loc": 0.0, "scale": 1.0, "amplitude": 1.0, "period": 10, "segments": 100},
    # Point masses on 0..3 carrying 90% of the mass plus a long uniform tail;
    # ``amplitude`` moves mass between the first two atoms periodically.
    CLUSTERED_INTEGER: {
        "atom_probs": [0.40, 0.25, 0.15, 0.10],
        "tail_low": 4.0,
        "tail_high": 1000.0,
        "amplitude": 0.15,
        "period": 20,
        "segments": 100,
    },
    SPREAD_CONTINUOUS: {"mu": 3.0, "sigma": 1.0, "amplitude": 0.5, "period": 20, "segments": 100},
    FIELD_CONDITIONAL: {
        "num_categories": 4,
        "mu": [0.0, 1.0, 2.0, 3.0],
        "sigma": [1.0, 0.5, 1.0, 0.5],
        "signs": [1, -1, 1, -1],
        "label_scale": 3.0,
        "label_bias": 0.0,
        "noise_vocab": 50,
        # "lognormal": exp(mu + sigma z); "uniform": uniform on [mu, mu + sigma].
        "family": "lognormal",
    },
}
KINDS = tuple(_DEFAULTS)


# -- distributions -----------------------------------------------------------


@dataclass(frozen=True)
class Component:
    """One mixture component: ``uniform``, ``normal``, ``lognormal`` or ``atom``."""

    kind: str
    p1: float
    p2: float = 0.0

    def cdf(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return np.clip((x - self.p1) / (self.p2 - self.p1), 0.0, 1.0)
        if self.kind == "normal":
            return special.ndtr((x - self.p1) / self.p2)
        if self.kind == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (np.log(np.where(x > 0, x, 1.0)) - self.p1) / self.p2
            return np.where(x > 0, special.ndtr(z), 0.0)
        return (x >= self.p1).astype(np.float64)

    def quantile(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return self.p1 + p * (self.p2 - self.p1)
        if self.kind == "normal":
            return self.p1 + self.p2 * special.ndtri(p)
        if self.kind == "lognormal":
            return np.exp(self.p1 + self.p2 * special.ndtri(p))
        return np.full_like(p, self.p1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.p1, self.p2, size=n)
        if self.kind == "normal":
            return rng.normal(self.p1, self.p2, size=n)
        if self.kind == "lognormal":
            return rng.lognormal(self.p1, self.p2, size=n)
        return np.full(n, self.p1)


@dataclass(frozen=True)
class GroundTruth:
    """Finite mixture with exact CDF and generalized-inverse quantile."""

    weights: tuple[float, ...]
    components: tuple[Component, ...]

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for w, c in zip(self.weights, self.components):
            out = out + w * c.cdf(x)
        return np.minimum(out, 1.0)

    def quantile(self, p: np.ndarray | float) -> np.ndarray:
        """``inf{x : F(x) >= p}`` by bisection between component quantiles."""
        p = np.asarray(p, dtype=np.float64)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        cq = np.stack([c.quantile(p) for c in self.components])
        hi = cq.max(axis=0)
        lo = cq.min(axis=0)
        # Below every component quantile F < p, so F(lo) >= p means lo is the answer.
        hi = np.where(self.cdf(lo) >= p, lo, hi)
        for _ in range(2000):
            mid = lo + (hi - lo) / 2.0
            done = (mid <= lo) | (mid >= hi)
            if done.all():
                break
            above = self.cdf(mid) >= p
            hi = np.where(~done & above, mid, hi)
            lo = np.where(~done & ~above, mid, lo)
        return hi

    @property
    def support(self) -> tuple[float, float]:
        lo = self.quantile(np.array(1e-12))
        hi = self.quantile(np.array(1 - 1e-12))
        return float(lo), float(hi)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Step CDF of a finite sample, usable wherever a :class:`GroundTruth` is."""

    sorted_values: np.ndarray

    @classmethod
    def from_sample(cls, values: np.ndarray) -> "EmpiricalDistribution":
        v = np.asarray(values, dtype=np.float64).ravel()
        v = np.sort(v[np.isfinite(v)])
        if v.size == 0:
            raise ValueError("empirical distribution needs at least one finite value")
        return cls(v)

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.searchsorted(self.sorted_values, x, side="right") / self.sorted_values.size

    def quantile(self, p: np.ndarray | float) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        n = self.sorted_values.size
        idx = np.clip(np.ceil(p * n).astype(np.int64) - 1, 0, n - 1)
        return self.sorted_values[idx]

    @property
    def support(self) -> tuple[float, float]:
        return float(self.sorted_values[0]), float(self.sorted_values[-1])


def _mixture(parts: Sequence[tuple[float, Sequence[tuple[float, Component]]]]) -> GroundTruth:
    merged: dict[Component, list[float]] = {}
    for seg_weight, seg in parts:
        for w, c in seg:
            if w > 0:
                merged.setdefault(c, []).append(seg_weight * w)
    total = math.fsum(math.fsum(ws) for ws in merged.values())
    return GroundTruth(
        tuple(math.fsum(ws) / total for ws in merged.values()), tuple(merged)
    )


# -- stream specs ------------------------------------------------------------


@dataclass
class StreamSpec:
    kind: str
    length: int
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in _DEFAULTS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        self.params = merged
        self._validate()

    def _validate(self) -> None:
        p = self.params
        if self.length < 1:
            raise ValueError("length must be positive")
        if "a" in p and not p["a"] < p["b"]:
            raise ValueError("need a < b")
        if "segments" in p and not (int(p["segments"]) == p["segments"] and p["segments"] >= 1):
            raise ValueError("segments must be a positive integer")
        if "segments" in p and p["segments"] > self.length:
            raise ValueError("more segments than stream elements")
        if "period" in p and not p["period"] >= 1:
            raise ValueError("period must be >= 1")
        if self.kind == CLUSTERED_INTEGER:
            probs = np.asarray(p["atom_probs"], dtype=np.float64)
            if probs.size < 2 or probs.sum() >= 1.0 or np.any(probs < 0):
                raise ValueError("atom_probs must be non-negative, at least two, summing below 1")
            if abs(p["amplitude"]) > min(probs[0], probs[1]):
                raise ValueError("amplitude would push an atom probability below 0")
            if not p["tail_low"] < p["tail_high"]:
                raise ValueError("need tail_low < tail_high")
        if self.kind in (SPREAD_CONTINUOUS, PERIODIC_SHIFT):
            if (p.get("sigma", 1.0) <= 0) or (p.get("scale", 1.0) <= 0):
                raise ValueError("scale parameters must be positive")
        if self.kind == FIELD_CONDITIONAL:
            k = p["num_categories"]
            if k < 2 or any(len(p[name]) != k for name in ("mu", "sigma", "signs")):
                raise ValueError("mu, sigma and signs need one entry per category")
            if min(p["sigma"]) <= 0:
                raise ValueError("sigma must be positive")
            if p["family"] not in ("lognormal", "uniform"):
                raise ValueError("family must be 'lognormal' or 'uniform'")

    @property
    def num_segments(self) -> int:
        return int(self.params.get("segments", 1))

    def segment_lengths(self) -> np.ndarray:
        k = self.num_segments
        base, extra = divmod(self.length, k)
        return np.array([base + (1 if i < extra else 0) for i in range(k)], dtype=np.int64)

    def segment_components(self, i: int) -> list[tuple[float, Component]]:
        """Mixture making up segment ``i`` (zero-based)."""
        p = self.params
        if self.kind == STATIONARY_UNIFORM:
            return [(1.0, Component("uniform", p["a"], p["b"]))]
        if self.kind == DRIFTING_UNIFORM:
            t = p["segments"]
            a_i = p["a"] + i / t * (p["b"] - p["a"])
            b_i = p["a"] + (i + 1) / t * (p["b"] - p["a"])
            return [(1.0, Component("uniform", a_i, b_i))]
        phase = math.cos(2.0 * math.pi * i / p.get("period", 1))
        if self.kind == PERIODIC_SHIFT:
            return [(1.0, Component("normal", p["loc"] + p["amplitude"] * phase, p["scale"]))]
        if self.kind == CLUSTERED_INTEGER:
            probs = list(p["atom_probs"])
            probs[0] += p["amplitude"] * phase
            probs[1] -= p["amplitude"] * phase
            parts = [(w, Component("atom", float(v))) for v, w in enumerate(probs)]
            parts.append((1.0 - sum(p["atom_probs"]), Component("uniform", p["tail_low"], p["tail_high"])))
            return parts
        if self.kind == SPREAD_CONTINUOUS:
            return [(1.0, Component("lognormal", p["mu"] + p["amplitude"] * phase, p["sigma"]))]
        k = p["num_categories"]
        return [(1.0 / k, _category_component(p, c)) for c in range(k)]

    def ground_truth(self) -> GroundTruth:
        lengths = self.segment_lengths()
        return _mixture([(float(n), self.segment_components(i)) for i, n in enumerate(lengths)])

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "StreamSpec":
        return cls(doc["kind"], int(doc["length"]), int(doc.get("seed", 0)), dict(doc.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StreamSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class Stream:
    values: np.ndarray
    segment: np.ndarray
    categorical: dict[str, np.ndarray] | None = None
    labels: np.ndarray | None = None


def _sample_mixture(rng: np.random.Generator, parts: list[tuple[float, Component]], n: int) -> np.ndarray:
    w = np.array([p[0] for p in parts], dtype=np.float64)
    which = rng.choice(len(parts), size=n, p=w / w.sum())
    out = np.empty(n, dtype=np.float64)
    for k, (_, comp) in enumerate(parts):
        sel = which == k
        out[sel] = comp.sample(rng, int(sel.sum()))
    return out


def generate(spec: StreamSpec) -> Stream:
    """Materialise a stream; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == FIELD_CONDITIONAL:
        return _field_conditional(spec, rng)
    lengths = spec.segment_lengths()
    values = np.empty(spec.length, dtype=np.float64)
    start = 0
    for i, n in enumerate(lengths):
        parts = spec.segment_components(i)
        if len(parts) == 1:
            values[start : start + n] = parts[0][1].sample(rng, int(n))
        else:
            values[start : start + n] = _sample_mixture(rng, parts, int(n))
        start += n
    segment = np.repeat(np.arange(lengths.size), lengths)
    return Stream(values, segment)


def _category_component(p: dict[str, Any], c: int) -> Component:
    mu, sigma = float(p["mu"][c]), float(p["sigma"][c])
    if p["family"] == "uniform":
        return Component("uniform", mu, mu + sigma)
    return Component("lognormal", mu, sigma)


def _field_conditional(spec: StreamSpec, rng: np.random.Generator) -> Stream:
    """Numeric value whose distribution *and* effect on the label depend on a category.

    The click logit is ``label_bias + label_scale * sign[c] * (2 u - 1)``
    where ``u`` is the value's quantile *within its own category*, so the
    same raw value means different things in different contexts.
    """
    p = spec.params
    k = p["num_categories"]
    n = spec.length
    cat = rng.integers(0, k, size=n)
    mu = np.asarray(p["mu"], dtype=np.float64)[cat]
    sigma = np.asarray(p["sigma"], dtype=np.float64)[cat]
    if p["family"] == "uniform":
        u = rng.uniform(size=n)
        values = mu + sigma * u
    else:
        z = rng.standard_normal(n)
        values = np.exp(mu + sigma * z)
        u = special.ndtr(z)
    signs = np.asarray(p["signs"], dtype=np.float64)[cat]
    logit = p["label_bias"] + p["label_scale"] * signs * (2.0 * u - 1.0)
    labels = (rng.uniform(size=n) < special.expit(logit)).astype(np.int64)
    noise = rng.integers(0, p["noise_vocab"], size=n)
    return Stream(
        values,
        np.zeros(n, dtype=np.int64),
        categorical={"context": cat.astype(np.int64), "noise": noise.astype(np.int64)},
        labels=labels,
    )


# -- divergences -------------------------------------------------------------


def _smooth(mass: np.ndarray, eps: float) -> np.ndarray:
    mass = np.clip(np.asarray(mass, dtype=np.float64), 0.0, None) + eps
    return mass / mass.sum()


def truth_bin_edges(truth: GroundTruth | EmpiricalDistribution, bins: int) -> np.ndarray:
    return truth.quantile(np.arange(1, bins) / bins)


def kl_histogram(
    boundaries: np.ndarray | QuantileTable,
    truth: GroundTruth | EmpiricalDistribution,
    bins: int = 100,
    eps: float = 1e-9,
) -> float:
    """``KL(truth || estimate)`` over the truth's equal-probability bins.

    The estimate is the CDF implied by the boundary table (equal mass per
    table bin, uniform inside a bin, zero-width bins acting as atoms).
    Both bin-mass vectors get ``eps`` added before renormalising.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    table = boundaries if isinstance(boundaries, QuantileTable) else QuantileTable(np.asarray(boundaries))
    edges = truth_bin_edges(truth, bins)
    if edges.size > 1 and edges[0] == edges[-1]:
        raise ValueError("degenerate ground truth: all bin edges coincide")
    f_true = np.concatenate([[0.0], truth.cdf(edges), [1.0]])
    f_est = np.concatenate([[0.0], quantile_position(edges, table), [1.0]])
    p = _smooth(np.diff(f_true), eps)
    q = _smooth(np.diff(f_est), eps)
    return float(np.sum(p * np.log(p / q)))


def psi(reference: np.ndarray, current: np.ndarray, eps: float = 1e-6) -> float:
    """Population stability index between two histograms (counts or proportions)."""
    ref = np.asarray(reference, dtype=np.float64)
    cur = np.asarray(current, dtype=np.float64)
    if ref.size == 0 or cur.size == 0 or ref.shape != cur.shape:
        raise ValueError("psi needs two non-empty histograms of equal length")
    if ref.sum() <= 0 or cur.sum() <= 0:
        raise ValueError("histograms must have positive total mass")
    p = _smooth(ref / ref.sum(), eps)
    q = _smooth(cur / cur.sum(), eps)
    return float(np.sum((q - p) * np.log(q / p)))


def psi_samples(reference: np.ndarray, current: np.ndarray, bins: int = 10) -> float:
    """PSI with bins at the reference sample's deciles (or ``bins``-tiles)."""
    ref = np.asarray(reference, dtype=np.float64)
    cur = np.asarray(current, dtype=np.float64)
    if ref.size == 0 or cur.size == 0:
        raise ValueError("psi needs non-empty samples")
    edges = np.unique(np.quantile(ref, np.arange(1, bins) / bins))
    ref_hist = np.bincount(np.searchsorted(edges, ref, side="right"), minlength=edges.size + 1)
    cur_hist = np.bincount(np.searchsorted(edges, cur, side="right"), minlength=edges.size + 1)
    return psi(ref_hist, cur_hist)


def ks(reference: np.ndarray, current: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup |F_ref - F_cur|``."""
    a = np.sort(np.asarray(reference, dtype=np.float64))
    b = np.sort(np.asarray(current, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks needs non-empty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass
class DriftReport:
    psi: np.ndarray
    ks: np.ndarray
    reference: int = 0


def drift_report(values: np.ndarray, segments: int, reference: int = 0, bins: int = 10) -> DriftReport:
    """PSI and KS of every consecutive segment against one reference segment."""
    parts = np.array_split(np.asarray(values, dtype=np.float64), segments)
    ref = parts[reference]
    return DriftReport(
        psi=np.array([psi_samples(ref, s, bins) for s in parts]),
        ks=np.array([ks(ref, s) for s in parts]),
        reference=reference,
    )


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation for lags ``0..max_lag``."""
    x = np.asarray(series, dtype=np.float64)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return np.zeros(max_lag + 1)
    return np.array([np.dot(x[: x.size - k], x[k:]) / denom for k in range(max_lag + 1)])


def dominant_period(series: np.ndarray, min_lag: int = 2, max_lag: int | None = None) -> int:
    """Lag of the highest autocorrelation peak in ``[min_lag, max_lag]``."""
    x = np.asarray(series)
    max_lag = max_lag if max_lag is not None else x.size // 2
    acf = autocorrelation(x, max_lag)
    return int(min_lag + np.argmax(acf[min_lag:]))


# -- order-statistics bias under linear drift --------------------------------


def closed_form_os_bias(alpha: float, a: float, b: float, t: int) -> float:
    """Mean of local quantiles minus the global quantile for linearly drifting uniforms."""
    return (t - 1) * (1 - 2 * alpha) / (2 * t) * (b - a)


@dataclass
class BiasResult:
    alpha: float
    t: int
    empirical: float
    closed_form: float
    reservoir: float | None = None


def drifting_uniform_bias(
    alpha: float,
    a: float,
    b: float,
    t: int,
    per_batch_n: int,
    seeds: Sequence[int],
    reservoir_size: int | None = None,
) -> BiasResult:
    """Run the order-statistics estimator over ``t`` drifting batches.

    Batch ``i`` is uniform on ``[a + (i-1)(b-a)/t, a + i(b-a)/t]``.  Returns the
    seed-averaged bias against the global quantile ``a + alpha (b - a)``,
    the closed form, and optionally the bias of a jump reservoir of the
    given size fed the same stream.
    """
    if not 0.0 < alpha < 1.0 or not a < b or t < 1 or per_batch_n < 1:
        raise ValueError("need 0 < alpha < 1, a < b, t >= 1, per_batch_n >= 1")
    truth = a + alpha * (b - a)
    os_bias, rs_bias = [], []
    for seed in seeds:
        spec = StreamSpec(DRIFTING_UNIFORM, t * per_batch_n, seed, {"a": a, "b": b, "segments": t})
        values = generate(spec).values
        est = OrderStatsEstimator([alpha])
        est.update_stream(values, per_batch_n)
        os_bias.append(float(est.running_means[0]) - truth)
        if reservoir_size is not None:
            r = Reservoir(reservoir_size, JUMP, seed)
            r.extend(values)
            rs_bias.append(r.estimate_quantile(alpha) - truth)
    return BiasResult(
        alpha,
        t,
        float(np.mean(os_bias)),
        closed_form_os_bias(alpha, a, b, t),
        float(np.mean(rs_bias)) if rs_bias else None,
    )


# -- distribution-estimation comparison --------------------------------------


@dataclass
class EstimateRow:
    method: str
    kl: float
    rng_calls: int | None
    writes: int | None
    boundaries: np.ndarray = field(repr=False)


def compare_estimators(
    values: np.ndarray,
    truth: GroundTruth | EmpiricalDistribution,
    reservoir_size: int,
    batch_size: int = 256,
    bins: int = 100,
    seed: int = 0,
) -> list[EstimateRow]:
    """KL of the order-statistics, standard-reservoir and jump-reservoir estimates."""
    levels = np.arange(1, bins) / bins
    os_est = OrderStatsEstimator(levels)
    os_est.update_stream(values, batch_size)
    rows = [EstimateRow("OS", kl_histogram(os_est.boundaries(), truth, bins), None, None, os_est.boundaries())]
    for name, mode in (("RS", STANDARD), ("JRS", JUMP)):
        r = Reservoir(reservoir_size, mode, seed)
        r.extend(values)
        # Scored on the whole reservoir; the reported table has ``bins`` bins like OS.
        kl = kl_histogram(build_table(r, len(r)), truth, bins)
        rows.append(EstimateRow(name, kl, r.rng_calls, r.writes, build_table(r, bins).boundaries))
    return rows


# -- feature selection statistics --------------------------------------------


def kruskal_wallis(groups: Sequence[np.ndarray]) -> tuple[float, float]:
    """Rank-based H statistic with tie correction and its chi-square p-value."""
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2 or any(g.size == 0 for g in groups):
        raise ValueError("need at least two non-empty groups")
    pooled = np.concatenate(groups)
    n = pooled.size
    ranks = stats.rankdata(pooled)
    sizes = np.array([g.size for g in groups])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rank_sums = np.array([ranks[bounds[i] : bounds[i + 1]].sum() for i in range(len(groups))])
    h = 12.0 / (n * (n + 1)) * np.sum(rank_sums**2 / sizes) - 3.0 * (n + 1)
    _, counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - np.sum(counts**3 - counts) / (n**3 - n) if n > 1 else 0.0
    if correction <= 0.0:
        return 0.0, 1.0
    h = max(h / correction, 0.0)
    return float(h), float(stats.chi2.sf(h, len(groups) - 1))


def wasserstein_pair(a: np.ndarray, b: np.ndarray) -> float:
    """1-D Wasserstein-1 distance ``integral |F_a - F_b| dx`` of two samples."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    pts = np.concatenate([a, b])
    pts.sort()
    widths = np.diff(pts)
    fa = np.searchsorted(a, pts[:-1], side="right") / a.size
    fb = np.searchsorted(b, pts[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def wasserstein_1d(groups: Sequence[np.ndarray]) -> float:
    """Mean pairwise Wasserstein-1 distance across groups."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    dists = [
        wasserstein_pair(groups[i], groups[j]) for i in range(len(groups)) for j in range(i + 1, len(groups))
    ]
    return float(np.mean(dists))

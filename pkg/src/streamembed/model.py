"""Single-pass streaming CTR model with distribution-aware numeric embeddings.

Each numeric field owns a reservoir, a lazily rebuilt quantile table and a
meta-embedding table; categorical fields use plain lookup tables.  All
field embeddings are concatenated and fed to a small ReLU MLP that outputs
a click probability.  Gradients are computed by hand and every sample is
used for exactly one update.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from . import modulation as mod
from .quantile_codec import QuantileTable, TableCache, encode_many, encode_value_space
from .reservoir import JUMP, MODES, Reservoir

QUANTILE = "quantile"
VALUE = "value"
RAW = "raw"
ENCODERS = (QUANTILE, VALUE, RAW)

P_CLAMP = 1e-7
CHECKPOINT_FORMAT = "streamembed.model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d: int = 8
    M: int = 10
    m: int = 10_000
    beta: float = 0.0
    modulation: str = mod.GATING
    hidden: tuple[int, ...] = (16, 8)
    lr: float = 0.05
    l2: float = 1e-6
    batch_size: int = 256
    seed: int = 0
    encoder: str = QUANTILE
    optimizer: str = "sgd"
    reservoir_mode: str = JUMP
    modulating_fields: tuple[str, ...] | None = None
    max_modulating_fields: int = 3

    def __post_init__(self) -> None:
        for name in ("d", "M", "m", "batch_size", "max_modulating_fields"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.lr < 0 or self.l2 < 0:
            raise ValueError("lr and l2 must be non-negative")
        if self.modulation not in mod.KINDS:
            raise ValueError(f"modulation must be one of {mod.KINDS}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.reservoir_mode not in MODES:
            raise ValueError(f"reservoir_mode must be one of {MODES}")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.modulating_fields is not None:
            object.__setattr__(self, "modulating_fields", tuple(self.modulating_fields))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        if self.modulating_fields is not None:
            out["modulating_fields"] = list(self.modulating_fields)
        return out


@dataclass(frozen=True)
class Schema:
    categorical: tuple[str, ...]
    numerical: tuple[str, ...]
    cardinality: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = [c for c in self.categorical if self.cardinality.get(c, 0) < 1]
        if missing:
            raise ValueError(f"no cardinality for categorical fields {missing}")
        if not self.categorical and not self.numerical:
            raise ValueError("schema has no fields")


@dataclass
class Batch:
    """Columnar samples: categorical ids, numeric values and binary labels."""

    cat: np.ndarray  # (n, n_cat) int64
    num: np.ndarray  # (n, n_num) float64
    label: np.ndarray  # (n,) float64 in {0, 1}

    def __post_init__(self) -> None:
        self.cat = np.asarray(self.cat, dtype=np.int64).reshape(len(self.label), -1)
        self.num = np.asarray(self.num, dtype=np.float64).reshape(len(self.label), -1)
        self.label = np.asarray(self.label, dtype=np.float64)
        if not np.isin(self.label, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return int(self.label.size)

    def __getitem__(self, idx: slice | np.ndarray) -> "Batch":
        return Batch(self.cat[idx], self.num[idx], self.label[idx])

    def check(self, schema: Schema) -> None:
        if self.cat.shape[1] != len(schema.categorical) or self.num.shape[1] != len(schema.numerical):
            raise ValueError(
                f"batch has {self.cat.shape[1]} categorical / {self.num.shape[1]} numeric columns, "
                f"schema expects {len(schema.categorical)} / {len(schema.numerical)}"
            )
        for i, name in enumerate(schema.categorical):
            col = self.cat[:, i]
            if col.size and (col.min() < 0 or col.max() >= schema.cardinality[name]):
                raise ValueError(f"ids of field {name!r} fall outside [0, {schema.cardinality[name]})")


def iter_batches(data: Batch, batch_size: int) -> Iterator[Batch]:
    for start in range(0, len(data), batch_size):
        yield data[start : start + batch_size]


def split_tail(data: Batch, fraction: float) -> tuple[Batch, Batch]:
    """Temporal split: the last ``fraction`` of rows become the evaluation set."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    cut = len(data) - int(round(len(data) * fraction))
    return data[:cut], data[cut:]


# -- metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    auc: float
    logloss: float
    count: int


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Exact ROC AUC from the rank-sum statistic; tied scores share ranks."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = stats.rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def log_loss(labels: np.ndarray, probs: np.ndarray) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# -- model -------------------------------------------------------------------


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


class CTRModel:
    """Numeric fields embedded through reservoir quantiles, categorical by lookup."""

    def __init__(self, schema: Schema, cfg: ModelConfig) -> None:
        self.schema = schema
        self.cfg = cfg
        self.mod_fields = self._pick_modulating_fields()
        rng = np.random.default_rng(cfg.seed)
        d, M = cfg.d, cfg.M
        k = d * len(self.mod_fields)
        p: dict[str, np.ndarray] = {}
        for name in schema.categorical:
            p[f"cat.{name}.emb"] = mod.init_meta_embeddings(schema.cardinality[name], d, rng)
        self.reservoirs: dict[str, Reservoir] = {}
        self.caches: dict[str, TableCache] = {}
        for i, name in enumerate(schema.numerical):
            self.reservoirs[name] = Reservoir(cfg.m, cfg.reservoir_mode, seed=cfg.seed * 1000 + i)
            self.caches[name] = TableCache(M)
            if cfg.encoder == RAW:
                p[f"num.{name}.raw"] = mod.init_meta_embeddings(1, d, rng)[0]
                continue
            p[f"num.{name}.E"] = mod.init_meta_embeddings(M, d, rng)
            if cfg.encoder == VALUE:
                p[f"num.{name}.vs_W"] = rng.normal(0.0, 1.0 / math.sqrt(M + 1), size=(M + 1, M))
                p[f"num.{name}.vs_b"] = np.zeros(M)
            elif self.modulated:
                p[f"num.{name}.mod"] = mod.ModulationParams.init(cfg.modulation, M, k, cfg.beta, rng).weight
        width = d * (len(schema.categorical) + len(schema.numerical))
        for j, h in enumerate((*cfg.hidden, 1)):
            p[f"mlp.W{j}"] = rng.normal(0.0, math.sqrt(2.0 / width), size=(width, h))
            p[f"mlp.b{j}"] = np.zeros(h)
            width = h
        self.params = p
        self.samples_trained = 0
        self.steps = 0
        self._adam: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _pick_modulating_fields(self) -> tuple[str, ...]:
        cfg, schema = self.cfg, self.schema
        if cfg.encoder != QUANTILE or cfg.modulation == mod.NONE:
            return ()
        if cfg.modulating_fields is not None:
            unknown = set(cfg.modulating_fields) - set(schema.categorical)
            if unknown:
                raise ValueError(f"modulating fields {sorted(unknown)} are not categorical fields")
            return cfg.modulating_fields
        ranked = sorted(schema.categorical, key=lambda c: (schema.cardinality[c], schema.categorical.index(c)))
        return tuple(ranked[: cfg.max_modulating_fields])

    @property
    def modulated(self) -> bool:
        return bool(self.mod_fields)

    # -- streaming state ---------------------------------------------------

    def observe(self, batch: Batch) -> None:
        """Feed the batch's numeric values to the per-field reservoirs."""
        for i, name in enumerate(self.schema.numerical):
            self.reservoirs[name].extend(batch.num[:, i])

    def table(self, name: str) -> QuantileTable:
        return self.caches[name].get(self.reservoirs[name])

    # -- forward / backward ------------------------------------------------

    def _numeric_input(self, name: str, x: np.ndarray) -> tuple[np.ndarray, QuantileTable]:
        table = self.table(name)
        # Missing values encode like the smallest observed value.
        return np.where(np.isfinite(x), x, table.boundaries[0]), table

    def embed_numeric(self, name: str, x: np.ndarray, e_f: np.ndarray | None = None) -> np.ndarray:
        """Embedding of numeric field ``name`` for values ``x``."""
        out, _ = self._embed_numeric(name, np.atleast_1d(np.asarray(x, dtype=np.float64)), e_f, self.params)
        return out

    def _embed_numeric(
        self, name: str, x: np.ndarray, e_f: np.ndarray | None, p: dict[str, np.ndarray]
    ) -> tuple[np.ndarray, Any]:
        x, table = self._numeric_input(name, x)
        b = table.boundaries
        span = b[-1] - b[0]
        scale = span if span > 0 else 1.0
        enc = self.cfg.encoder
        if enc == RAW:
            z = (np.clip(x, b[0], b[-1]) - b[0]) / scale
            return z[:, None] * p[f"num.{name}.raw"], z
        if enc == VALUE:
            dist = encode_value_space(x, table) / scale
            w = dist @ p[f"num.{name}.vs_W"] + p[f"num.{name}.vs_b"]
            out, cache = mod.forward(w, None, mod.ModulationParams(mod.NONE, 0.0), p[f"num.{name}.E"])
            return out, (dist, cache)
        v = encode_many(x, table)
        if self.modulated:
            params = mod.ModulationParams(self.cfg.modulation, self.cfg.beta, p[f"num.{name}.mod"])
        else:
            params = mod.ModulationParams(mod.NONE, 0.0)
            e_f = None
        return mod.forward(v, e_f, params, p[f"num.{name}.E"])

    def _context(self, batch: Batch, p: dict[str, np.ndarray]) -> np.ndarray | None:
        if not self.modulated:
            return None
        cols = [self.schema.categorical.index(c) for c in self.mod_fields]
        return np.concatenate([p[f"cat.{c}.emb"][batch.cat[:, i]] for c, i in zip(self.mod_fields, cols)], axis=1)

    def _forward(self, batch: Batch, p: dict[str, np.ndarray]) -> tuple[np.ndarray, dict[str, Any]]:
        e_f = self._context(batch, p)
        parts, num_caches = [], {}
        for i, name in enumerate(self.schema.numerical):
            out, cache = self._embed_numeric(name, batch.num[:, i], e_f, p)
            parts.append(out)
            num_caches[name] = cache
        for i, name in enumerate(self.schema.categorical):
            parts.append(p[f"cat.{name}.emb"][batch.cat[:, i]])
        h = np.concatenate(parts, axis=1)
        acts = [h]
        n_layers = len(self.cfg.hidden) + 1
        for j in range(n_layers):
            z = acts[-1] @ p[f"mlp.W{j}"] + p[f"mlp.b{j}"]
            acts.append(_relu(z) if j < n_layers - 1 else z)
        logit = acts[-1][:, 0]
        prob = mod.sigmoid(logit)
        return prob, {"acts": acts, "num": num_caches, "e_f": e_f}

    def predict(self, batch: Batch) -> np.ndarray:
        batch.check(self.schema)
        return self._forward(batch, self.params)[0]

    def loss(self, batch: Batch, params: dict[str, np.ndarray] | None = None) -> float:
        p = self.params if params is None else params
        prob, _ = self._forward(batch, p)
        return log_loss(batch.label, prob) + self.cfg.l2 * sum(float(np.sum(v * v)) for v in p.values())

    def loss_and_grad(self, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
        """Mean clamped binary cross-entropy plus ``l2 * ||params||^2``, and its gradient.

        Quantile tables are read as they are; nothing here updates the reservoirs.
        """
        if len(batch) == 0:
            raise ValueError("empty batch")
        batch.check(self.schema)
        p = self.params
        prob, fc = self._forward(batch, p)
        y = batch.label
        n = len(batch)
        loss = log_loss(y, prob) + self.cfg.l2 * sum(float(np.sum(v * v)) for v in p.values())

        grads = {k: 2.0 * self.cfg.l2 * v for k, v in p.items()}
        inside = (prob > P_CLAMP) & (prob < 1.0 - P_CLAMP)
        g = (((prob - y) / n) * inside)[:, None]
        acts = fc["acts"]
        for j in reversed(range(len(self.cfg.hidden) + 1)):
            grads[f"mlp.W{j}"] += acts[j].T @ g
            grads[f"mlp.b{j}"] += g.sum(axis=0)
            g = g @ p[f"mlp.W{j}"].T
            if j > 0:
                g = g * (acts[j] > 0)
        d = self.cfg.d
        g_ef = None if fc["e_f"] is None else np.zeros_like(fc["e_f"])
        for i, name in enumerate(self.schema.numerical):
            g_i = g[:, i * d : (i + 1) * d]
            cache = fc["num"][name]
            if self.cfg.encoder == RAW:
                grads[f"num.{name}.raw"] += cache @ g_i
                continue
            if self.cfg.encoder == VALUE:
                dist, mcache = cache
                mg = mod.backward(g_i, mcache)
                grads[f"num.{name}.E"] += mg["E"]
                g_w = g_i @ p[f"num.{name}.E"].T
                grads[f"num.{name}.vs_W"] += dist.T @ g_w
                grads[f"num.{name}.vs_b"] += g_w.sum(axis=0)
                continue
            mg = mod.backward(g_i, cache)
            grads[f"num.{name}.E"] += mg["E"]
            if self.modulated:
                grads[f"num.{name}.mod"] += mg["weight"]
                g_ef += mg["e_f"]
        offset = d * len(self.schema.numerical)
        for i, name in enumerate(self.schema.categorical):
            np.add.at(grads[f"cat.{name}.emb"], batch.cat[:, i], g[:, offset + i * d : offset + (i + 1) * d])
        if g_ef is not None:
            for k, c in enumerate(self.mod_fields):
                col = self.schema.categorical.index(c)
                np.add.at(grads[f"cat.{c}.emb"], batch.cat[:, col], g_ef[:, k * d : (k + 1) * d])
        return loss, grads

    def apply_gradients(self, grads: dict[str, np.ndarray]) -> None:
        lr = self.cfg.lr
        self.steps += 1
        if self.cfg.optimizer == "sgd":
            for k, gk in grads.items():
                self.params[k] -= lr * gk
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        for k, gk in grads.items():
            m1, m2 = self._adam.get(k, (np.zeros_like(gk), np.zeros_like(gk)))
            m1 = b1 * m1 + (1 - b1) * gk
            m2 = b2 * m2 + (1 - b2) * gk * gk
            self._adam[k] = (m1, m2)
            m1_hat = m1 / (1 - b1**self.steps)
            m2_hat = m2 / (1 - b2**self.steps)
            self.params[k] -= lr * m1_hat / (np.sqrt(m2_hat) + eps)

    def train_step(self, batch: Batch) -> float:
        """Observe, refresh tables lazily, take one gradient step."""
        batch.check(self.schema)
        self.observe(batch)
        loss, grads = self.loss_and_grad(batch)
        self.apply_gradients(grads)
        self.samples_trained += len(batch)
        return loss

    # -- checkpoints -------------------------------------------------------

    def checkpoint(self) -> dict[str, Any]:
        """Everything needed to resume training exactly, as plain JSON types."""

        def arr(v: np.ndarray) -> dict[str, Any]:
            return {"shape": list(v.shape), "data": v.ravel().tolist()}

        return {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "params": {k: arr(v) for k, v in sorted(self.params.items())},
            "adam": {k: [arr(m1), arr(m2)] for k, (m1, m2) in sorted(self._adam.items())},
            "steps": self.steps,
            "samples_trained": self.samples_trained,
            "reservoirs": {k: r.to_dict() for k, r in self.reservoirs.items()},
        }

    def load_checkpoint(self, doc: dict[str, Any]) -> None:
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported model checkpoint")
        if ModelConfig.from_dict(doc["config"]) != self.cfg:
            raise ValueError("checkpoint was written with a different model config")

        def arr(entry: dict[str, Any]) -> np.ndarray:
            return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])

        if set(doc["params"]) != set(self.params):
            raise ValueError("checkpoint parameters do not match the model")
        for k, entry in doc["params"].items():
            if list(self.params[k].shape) != entry["shape"]:
                raise ValueError(f"checkpoint parameter {k!r} has the wrong shape")
            self.params[k] = arr(entry)
        self._adam = {k: (arr(a), arr(b)) for k, (a, b) in doc.get("adam", {}).items()}
        self.steps = int(doc.get("steps", 0))
        self.samples_trained = int(doc.get("samples_trained", 0))
        for k, rdoc in doc["reservoirs"].items():
            self.reservoirs[k] = Reservoir.from_dict(rdoc)
            # A restored reservoir may reuse a version number the old cache saw.
            self.caches[k] = TableCache(self.cfg.M)


def evaluate(model: CTRModel, data: Batch) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    prob = model.predict(data)
    return Metrics(auc_score(data.label, prob), log_loss(data.label, prob), len(data))


@dataclass
class TrainResult:
    model: CTRModel
    trajectory: list[tuple[int, float, float]]
    final: Metrics | None


def train_stream(
    batches: Iterable[Batch],
    schema: Schema,
    cfg: ModelConfig,
    holdout: Batch | None = None,
    eval_every: int = 0,
) -> TrainResult:
    """One pass over ``batches``; each sample drives exactly one update.

    When ``holdout`` is given it is scored every ``eval_every`` steps (if
    positive) and once at the end; the rows form the metrics trajectory.
    """
    model = CTRModel(schema, cfg)
    trajectory: list[tuple[int, float, float]] = []
    for batch in batches:
        model.train_step(batch)
        if holdout is not None and eval_every > 0 and model.steps % eval_every == 0:
            m = evaluate(model, holdout)
            trajectory.append((model.steps, m.auc, m.logloss))
    final = None
    if holdout is not None:
        final = evaluate(model, holdout)
        if not trajectory or trajectory[-1][0] != model.steps:
            trajectory.append((model.steps, final.auc, final.logloss))
    return TrainResult(model, trajectory, final)


# -- data sources ------------------------------------------------------------


def dataset_from_stream(stream: Any) -> tuple[Schema, Batch]:
    """Turn a labelled generator stream into a schema plus columnar samples."""
    if stream.labels is None or stream.categorical is None:
        raise ValueError("stream has no labels/categorical fields; use a field_conditional generator")
    names = tuple(stream.categorical)
    cat = np.stack([stream.categorical[c] for c in names], axis=1)
    card = {c: int(stream.categorical[c].max()) + 1 for c in names}
    schema = Schema(names, ("value",), card)
    return schema, Batch(cat, stream.values[:, None], stream.labels)


def _hash_id(token: str, buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % buckets


def read_csv(
    path: str | Path,
    categorical: Sequence[str] | None = None,
    numerical: Sequence[str] | None = None,
    buckets: int = 1000,
) -> tuple[Schema, Batch]:
    """Load a CSV with a header row and a ``label`` column.

    Unless given explicitly, a column is numeric when every non-empty cell
    parses as a float, categorical otherwise.  Categorical tokens are
    hashed into ``buckets`` ids; empty numeric cells become NaN.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise ValueError(f"{path}: CSV needs a header row with a 'label' column")
        rows = list(reader)
        header = [c for c in reader.fieldnames if c != "label"]
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def _is_float(s: str) -> bool:
        try:
            float(s)
        except ValueError:
            return False
        return True

    if categorical is None or numerical is None:
        inferred_num = [c for c in header if all(r[c] == "" or _is_float(r[c]) for r in rows)]
        numerical = inferred_num if numerical is None else numerical
        categorical = [c for c in header if c not in numerical] if categorical is None else categorical
    cat = np.array([[_hash_id(r[c], buckets) for c in categorical] for r in rows], dtype=np.int64)
    num = np.array(
        [[float(r[c]) if r[c] != "" else math.nan for c in numerical] for r in rows], dtype=np.float64
    )
    label = np.array([float(r["label"]) for r in rows])
    schema = Schema(tuple(categorical), tuple(numerical), {c: buckets for c in categorical})
    return schema, Batch(cat.reshape(len(rows), len(categorical)), num.reshape(len(rows), len(numerical)), label)


def config_with(cfg: ModelConfig, **overrides: Any) -> ModelConfig:
    return replace(cfg, **overrides)


def save_checkpoint(model: CTRModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.checkpoint(), sort_keys=True), encoding="utf-8")

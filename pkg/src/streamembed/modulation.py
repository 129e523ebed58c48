"""Field-aware modulation of thermometer weights and meta-embedding aggregation.

Shapes (a leading batch axis ``B`` is optional everywhere):

* ``v_raw``: ``(B, M)`` thermometer weights, treated as constants.
* ``e_f``: ``(B, k)`` context embedding of the modulating field(s).
* ``E``: ``(M, d)`` meta-embeddings.

Affine:  ``W_mod = reshape(W_tran @ e_f, (M, M))`` (row-major), then
``w = beta * sigmoid(W_mod @ v_raw) + (1 - beta) * v_raw``.

Gating:  ``w = beta * v_raw * sigmoid(W_gate @ e_f) + (1 - beta) * v_raw``.

The embedding is ``w @ E``.  :func:`backward` returns exact gradients for
``E``, the modulation weights and ``e_f``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

AFFINE = "affine"
GATING = "gating"
NONE = "none"
KINDS = (AFFINE, GATING, NONE)

FORMAT_NAME = "streamembed.modulation"
FORMAT_VERSION = 1


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ModulationParams:
    kind: str
    beta: float
    weight: np.ndarray | None = None  # W_tran (M*M, k) or W_gate (M, k)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta!r}")
        if self.kind == NONE:
            if self.weight is not None:
                raise ValueError("kind='none' takes no weight")
        elif self.weight is None or np.ndim(self.weight) != 2:
            raise ValueError(f"kind={self.kind!r} needs a 2-d weight matrix")

    @classmethod
    def init(
        cls, kind: str, M: int, k: int, beta: float, rng: np.random.Generator, std: float = 0.01
    ) -> "ModulationParams":
        """Small normal weights so training starts near sigmoid(0) = 0.5."""
        rows = {AFFINE: M * M, GATING: M}.get(kind)
        weight = None if rows is None else rng.normal(0.0, std, size=(rows, k))
        return cls(kind, beta, weight)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "beta": self.beta,
            "shape": None if self.weight is None else list(self.weight.shape),
            "weight": None if self.weight is None else self.weight.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ModulationParams":
        if doc.get("format") != FORMAT_NAME or doc.get("format_version") != FORMAT_VERSION:
            raise ValueError("not a supported modulation document")
        w = doc["weight"]
        weight = None if w is None else np.asarray(w, dtype=np.float64).reshape(doc["shape"])
        return cls(doc["kind"], float(doc["beta"]), weight)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModulationParams":
        return cls.from_dict(json.loads(text))


def init_meta_embeddings(M: int, d: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=(M, d))


@dataclass
class ForwardCache:
    kind: str
    beta: float
    v_raw: np.ndarray
    e_f: np.ndarray | None
    weight: np.ndarray | None
    gate: np.ndarray | None  # sigmoid output of the modulated branch
    w: np.ndarray
    E: np.ndarray
    squeeze: bool


def _as_batch(v_raw: np.ndarray, e_f: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None, bool]:
    v = np.asarray(v_raw, dtype=np.float64)
    squeeze = v.ndim == 1
    v = np.atleast_2d(v)
    if e_f is not None:
        e = np.atleast_2d(np.asarray(e_f, dtype=np.float64))
        if e.shape[0] != v.shape[0]:
            raise ValueError(f"batch mismatch: v_raw {v.shape} vs e_f {e.shape}")
    else:
        e = None
    return v, e, squeeze


def _affine_gate(v: np.ndarray, e: np.ndarray, w_tran: np.ndarray) -> np.ndarray:
    M = v.shape[1]
    if w_tran.shape != (M * M, e.shape[1]):
        raise ValueError(f"W_tran must have shape {(M * M, e.shape[1])}, got {w_tran.shape}")
    w_mod = (e @ w_tran.T).reshape(-1, M, M)
    return sigmoid(np.einsum("bik,bk->bi", w_mod, v))


def _gating_gate(v: np.ndarray, e: np.ndarray, w_gate: np.ndarray) -> np.ndarray:
    M = v.shape[1]
    if w_gate.shape != (M, e.shape[1]):
        raise ValueError(f"W_gate must have shape {(M, e.shape[1])}, got {w_gate.shape}")
    return sigmoid(e @ w_gate.T)


def _mix(v: np.ndarray, gate: np.ndarray | None, p: ModulationParams) -> np.ndarray:
    if p.kind == NONE:
        return v.copy()
    branch = gate if p.kind == AFFINE else v * gate
    # 0 * branch and 0 * v vanish exactly, so beta in {0, 1} is bit-exact.
    return p.beta * branch + (1.0 - p.beta) * v


def modulate_affine(v_raw: np.ndarray, e_f: np.ndarray, p: ModulationParams) -> np.ndarray:
    if p.kind != AFFINE:
        raise ValueError("modulate_affine needs kind='affine'")
    v, e, squeeze = _as_batch(v_raw, e_f)
    out = _mix(v, _affine_gate(v, e, p.weight), p)
    return out[0] if squeeze else out


def modulate_gating(v_raw: np.ndarray, e_f: np.ndarray, p: ModulationParams) -> np.ndarray:
    if p.kind != GATING:
        raise ValueError("modulate_gating needs kind='gating'")
    v, e, squeeze = _as_batch(v_raw, e_f)
    out = _mix(v, _gating_gate(v, e, p.weight), p)
    return out[0] if squeeze else out


def aggregate(w: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``sum_i w_i * E_i`` (batched over leading axes of ``w``)."""
    w = np.asarray(w, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or w.shape[-1] != E.shape[0]:
        raise ValueError(f"cannot aggregate weights {w.shape} with table {E.shape}")
    return w @ E


def forward(
    v_raw: np.ndarray, e_f: np.ndarray | None, p: ModulationParams, E: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Modulate then aggregate; returns the embedding and the backward cache."""
    v, e, squeeze = _as_batch(v_raw, e_f)
    if p.kind == NONE:
        gate = None
    elif e is None:
        raise ValueError(f"kind={p.kind!r} needs a field embedding")
    elif p.kind == AFFINE:
        gate = _affine_gate(v, e, p.weight)
    else:
        gate = _gating_gate(v, e, p.weight)
    w = _mix(v, gate, p)
    out = aggregate(w, E)
    cache = ForwardCache(p.kind, p.beta, v, e, p.weight, gate, w, np.asarray(E), squeeze)
    return (out[0] if squeeze else out), cache


def backward(grad_out: np.ndarray, cache: ForwardCache | None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dL/d(embedding)``.

    Returns a dict with ``"E"``, ``"weight"`` (absent for kind ``none``)
    and ``"e_f"`` (absent when no field embedding was used).  ``v_raw``
    receives no gradient.
    """
    if cache is None:
        raise ValueError("backward called without a forward cache")
    g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    if g.shape != (cache.w.shape[0], cache.E.shape[1]):
        raise ValueError(f"upstream gradient has shape {g.shape}, expected {(cache.w.shape[0], cache.E.shape[1])}")
    grads = {"E": cache.w.T @ g}
    if cache.kind == NONE:
        if cache.e_f is not None:
            grads["e_f"] = np.zeros_like(cache.e_f[0] if cache.squeeze else cache.e_f)
        return grads
    g_w = g @ cache.E.T
    s = cache.gate
    if cache.kind == AFFINE:
        g_z = cache.beta * g_w * s * (1.0 - s)
        M = cache.v_raw.shape[1]
        g_wmod = g_z[:, :, None] * cache.v_raw[:, None, :]  # (B, M, M)
        grads["weight"] = np.einsum("bik,bl->ikl", g_wmod, cache.e_f).reshape(M * M, -1)
        g_e = g_wmod.reshape(g_wmod.shape[0], -1) @ cache.weight
    else:
        g_a = cache.beta * g_w * cache.v_raw * s * (1.0 - s)
        grads["weight"] = g_a.T @ cache.e_f
        g_e = g_a @ cache.weight
    grads["e_f"] = g_e[0] if cache.squeeze else g_e
    return grads

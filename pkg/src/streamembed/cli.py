"""Command-line entry point: ``streamembed <subcommand> [options]``.

Every subcommand resolves its settings as built-in defaults, then the
``--config`` JSON file, then command-line flags.  Results are long-format
CSV files (``..., metric, value``) with a ``<name>.meta.json`` sidecar
holding the resolved settings, their SHA-256, the seed list and the
package version.  Nothing time- or path-dependent is written, so two runs
with the same seeds produce byte-identical files.

Seeds fan out over worker threads; results are merged in seed order.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from . import streamlab as sl
from .model import (
    ModelConfig,
    Schema,
    dataset_from_stream,
    iter_batches,
    read_csv,
    split_tail,
    train_stream,
)
from .quantile_codec import QuantileTable, build_table, encode, encode_value_space
from .reservoir import JUMP, Reservoir

ENV_OUT = "STREAMEMBED_OUT"
DEFAULT_OUT = "streamembed-out"

_FC = sl.FIELD_CONDITIONAL

DEFAULTS: dict[str, dict[str, Any]] = {
    "estimate": {
        "stream": {"kind": sl.CLUSTERED_INTEGER, "params": {}},
        "length": 1_000_000,
        "reservoir_size": 10_000,
        "bins": 100,
        "batch_size": 256,
        "column": None,
    },
    "bias": {
        "alphas": [0.1, 0.25, 0.5, 0.75, 0.9],
        "t": [1, 10],
        "a": 0.0,
        "b": 1.0,
        "per_batch_n": 10_000,
        "reservoir_size": 10_000,
    },
    "train": {
        "stream": {"kind": _FC, "params": {}},
        "length": 100_000,
        "holdout": 0.2,
        "eval_every": 50,
        "encoders": ["quantile", "value"],
        "model": {},
    },
    "sweep-beta": {
        "stream": {"kind": _FC, "params": {}},
        "length": 100_000,
        "holdout": 0.2,
        "betas": [0.0, 0.25, 0.5, 0.75, 1.0],
        "model": {},
    },
    "drift": {
        "stream": {"kind": sl.PERIODIC_SHIFT, "params": {}},
        "length": 100_000,
        "segments": None,
        "bins": 10,
        "column": None,
    },
    "encode-demo": {
        "stream": {"kind": sl.STATIONARY_UNIFORM, "params": {}},
        "length": 10_000,
        "reservoir_size": 10_000,
        "M": 10,
        "values": [0.05, 0.5, 0.95],
        "boundaries": None,
    },
}


class UsageError(ValueError):
    pass


# -- settings ----------------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    """``"0,1,5"``, ``"0-4"`` or a mix of both; seeds are non-negative and distinct."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            a = int(lo)
            b = int(hi) if sep else a
        except ValueError:
            raise UsageError(f"bad seed {part!r}; seeds are non-negative integers") from None
        if b < a:
            raise UsageError(f"empty seed range {part!r}")
        seeds.extend(range(a, b + 1))
    if not seeds:
        raise UsageError("seed list is empty")
    if len(set(seeds)) != len(seeds):
        raise UsageError(f"duplicate seeds in {text!r}")
    return seeds


def _merge(base: dict[str, Any], override: dict[str, Any], where: str) -> dict[str, Any]:
    unknown = set(override) - set(base)
    if unknown:
        raise UsageError(f"unknown {where} keys: {sorted(unknown)}")
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k == "stream" and isinstance(v, dict):
            out[k] = {**out[k], **v}
        elif k == "model" and isinstance(v, dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _parse_assignments(items: Sequence[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_settings(command: str, args: argparse.Namespace) -> dict[str, Any]:
    settings = copy.deepcopy(DEFAULTS[command])
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        settings = _merge(settings, doc, "config")
        stray = set(settings.get("stream", {})) - {"kind", "params", "csv"}
        if stray:
            raise UsageError(f"unknown stream keys: {sorted(stray)}")
    if getattr(args, "stream", None) and "stream" in settings:
        path = Path(args.stream)
        if path.suffix.lower() == ".json":
            doc = json.loads(path.read_text(encoding="utf-8"))
            settings["stream"] = {"kind": doc["kind"], "params": doc.get("params", {})}
            if "length" in doc:
                settings["length"] = int(doc["length"])
        else:
            settings["stream"] = {"csv": str(args.stream)}
    flags = {k.replace("-", "_"): v for k, v in vars(args).items()}
    for key in settings:
        if key in ("stream", "model"):
            continue
        v = flags.get(key)
        if v is not None:
            settings[key] = v
    if "model" in settings:
        settings["model"].update(_parse_assignments(args.model_set or []))
        for key in ("lr", "optimizer", "modulation"):
            if flags.get(key) is not None:
                settings["model"][key] = flags[key]
    return settings


def settings_hash(settings: dict[str, Any]) -> str:
    blob = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- output ------------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Output:
    def __init__(self, root: Path, command: str, settings: dict[str, Any], seeds: list[int]) -> None:
        self.root = root
        self.meta = {
            "artifact": "streamembed",
            "version": __version__,
            "command": command,
            "config": settings,
            "config_sha256": settings_hash(settings),
            "seeds": seeds,
        }
        self.written: list[Path] = []

    def _sidecar(self, path: Path) -> None:
        side = path.with_name(path.name + ".meta.json")
        side.write_text(json.dumps({**self.meta, "file": path.name}, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        self.written.append(side)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.root / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.written.append(path)
        self._sidecar(path)
        return path

    def json(self, name: str, doc: Any) -> Path:
        path = self.root / name
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        self.written.append(path)
        self._sidecar(path)
        return path


def _fan_out(fn: Callable[[int], Any], seeds: list[int], workers: int) -> list[Any]:
    if workers <= 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        return list(pool.map(fn, seeds))


# -- inputs ------------------------------------------------------------------


def _spec(settings: dict[str, Any], seed: int) -> sl.StreamSpec:
    s = settings["stream"]
    return sl.StreamSpec(s["kind"], int(settings["length"]), seed, dict(s.get("params", {})))


def read_column(path: str | Path, column: str | None = None) -> np.ndarray:
    """One numeric column of a headed CSV (the first numeric non-label column by default)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames:
            raise UsageError(f"{path}: empty CSV")
        rows = list(reader)
        names = list(reader.fieldnames)
    if not rows:
        raise UsageError(f"{path}: no data rows")
    if column is None:
        for name in names:
            if name == "label":
                continue
            try:
                [float(r[name]) for r in rows if r[name] != ""]
            except ValueError:
                continue
            column = name
            break
        else:
            raise UsageError(f"{path}: no numeric column")
    if column not in names:
        raise UsageError(f"{path}: no column {column!r}")
    return np.array([float(r[column]) if r[column] != "" else math.nan for r in rows])


def _values(settings: dict[str, Any], seed: int) -> tuple[np.ndarray, Any]:
    """Stream values plus a reference distribution for scoring."""
    if "csv" in settings["stream"]:
        values = read_column(settings["stream"]["csv"], settings.get("column"))
        return values, sl.EmpiricalDistribution.from_sample(values)
    spec = _spec(settings, seed)
    return sl.generate(spec).values, spec.ground_truth()


def _labelled(settings: dict[str, Any], seed: int) -> tuple[Schema, Any]:
    if "csv" in settings["stream"]:
        return read_csv(settings["stream"]["csv"])
    return dataset_from_stream(sl.generate(_spec(settings, seed)))


# -- subcommands -------------------------------------------------------------


def cmd_estimate(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    m, bins = int(settings["reservoir_size"]), int(settings["bins"])

    def run(seed: int) -> list[sl.EstimateRow]:
        values, truth = _values(settings, seed)
        return sl.compare_estimators(values, truth, m, int(settings["batch_size"]), bins, seed)

    results = _fan_out(run, seeds, workers)
    rows, tables = [], []
    for seed, est in zip(seeds, results):
        by_name = {r.method: r for r in est}
        for r in est:
            rows.append((seed, r.method, "kl", r.kl))
            if r.rng_calls is not None:
                rows.append((seed, r.method, "rng_calls", r.rng_calls))
                rows.append((seed, r.method, "writes", r.writes))
            tables.append({"seed": seed, "method": r.method, "table": QuantileTable(r.boundaries).to_dict()})
        rs, jrs = by_name["RS"], by_name["JRS"]
        rows.append((seed, "JRS", "rng_call_ratio", jrs.rng_calls / rs.rng_calls))
        rows.append((seed, "JRS", "write_ratio", jrs.writes / rs.writes))
    out.csv("kl_report.csv", ("seed", "method", "metric", "value"), rows)
    out.json("tables.json", tables)


def cmd_bias(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    jobs = [(float(a), int(t)) for a in settings["alphas"] for t in settings["t"]]
    m = settings["reservoir_size"]

    def run(job: tuple[float, int]) -> sl.BiasResult:
        alpha, t = job
        return sl.drifting_uniform_bias(
            alpha, float(settings["a"]), float(settings["b"]), t, int(settings["per_batch_n"]), seeds,
            None if m is None else int(m),
        )

    results = _fan_out(run, jobs, workers)  # type: ignore[arg-type]
    rows = []
    for r in results:
        rows.append((r.alpha, r.t, "os_bias", r.empirical))
        rows.append((r.alpha, r.t, "closed_form", r.closed_form))
        rows.append((r.alpha, r.t, "os_minus_closed_form", r.empirical - r.closed_form))
        if r.reservoir is not None:
            rows.append((r.alpha, r.t, "reservoir_bias", r.reservoir))
    out.csv("bias_report.csv", ("alpha", "t", "metric", "value"), rows)


def _model_config(settings: dict[str, Any], seed: int, **overrides: Any) -> ModelConfig:
    doc = {**settings.get("model", {}), "seed": seed, **overrides}
    return ModelConfig.from_dict(doc)


def cmd_train(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    def run(seed: int) -> list[tuple]:
        schema, data = _labelled(settings, seed)
        train, test = split_tail(data, float(settings["holdout"]))
        rows = []
        for enc in settings["encoders"]:
            cfg = _model_config(settings, seed, encoder=enc)
            res = train_stream(iter_batches(train, cfg.batch_size), schema, cfg, test, int(settings["eval_every"]))
            for step, auc, ll in res.trajectory:
                rows.append((seed, enc, step, "auc", auc))
                rows.append((seed, enc, step, "logloss", ll))
        return rows

    rows = [r for part in _fan_out(run, seeds, workers) for r in part]
    out.csv("train_metrics.csv", ("seed", "encoder", "step", "metric", "value"), rows)


def cmd_sweep_beta(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    def run(seed: int) -> list[tuple]:
        schema, data = _labelled(settings, seed)
        train, test = split_tail(data, float(settings["holdout"]))
        rows = []
        for beta in settings["betas"]:
            cfg = _model_config(settings, seed, beta=float(beta))
            final = train_stream(iter_batches(train, cfg.batch_size), schema, cfg, test).final
            rows.append((seed, float(beta), "auc", final.auc))
            rows.append((seed, float(beta), "logloss", final.logloss))
        return rows

    rows = [r for part in _fan_out(run, seeds, workers) for r in part]
    out.csv("beta_sweep.csv", ("seed", "beta", "metric", "value"), rows)


def cmd_drift(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    def run(seed: int) -> tuple[sl.DriftReport, int, int]:
        values, _ = _values(settings, seed)
        values = values[np.isfinite(values)]
        segments = settings["segments"]
        if segments is None:
            segments = 100 if "csv" in settings["stream"] else _spec(settings, seed).num_segments
        if segments < 4:
            raise UsageError("drift needs at least 4 segments")
        rep = sl.drift_report(values, int(segments), bins=int(settings["bins"]))
        # Skip the reference segment itself, whose statistics are identically 0.
        return rep, sl.dominant_period(rep.psi[1:]), sl.dominant_period(rep.ks[1:])

    series, summary = [], []
    for seed, (rep, p_psi, p_ks) in zip(seeds, _fan_out(run, seeds, workers)):
        for i, (a, b) in enumerate(zip(rep.psi, rep.ks)):
            series.append((seed, i, "psi", a))
            series.append((seed, i, "ks", b))
        summary.append((seed, "psi_period", p_psi))
        summary.append((seed, "ks_period", p_ks))
    out.csv("drift_series.csv", ("seed", "segment", "metric", "value"), series)
    out.csv("drift_period.csv", ("seed", "metric", "value"), summary)


def cmd_encode_demo(settings: dict[str, Any], seeds: list[int], out: Output, workers: int) -> None:
    xs = np.asarray(settings["values"], dtype=np.float64)

    def run(seed: int) -> QuantileTable:
        if settings["boundaries"] is not None:
            return QuantileTable(np.asarray(settings["boundaries"], dtype=np.float64))
        values, _ = _values(settings, seed)
        r = Reservoir(int(settings["reservoir_size"]), JUMP, seed)
        r.extend(values)
        return build_table(r, int(settings["M"]))

    rows, tables = [], []
    for seed, table in zip(seeds, _fan_out(run, seeds, workers)):
        tables.append({"seed": seed, "table": table.to_dict()})
        for x, dist in zip(xs, encode_value_space(xs, table)):
            code = encode(x, table)
            rows.append((seed, x, "bin", code.bin_index))
            rows.append((seed, x, "fraction", code.fraction))
            rows.append((seed, x, "quantile", code.quantile))
            rows.extend((seed, x, f"w_{i}", v) for i, v in enumerate(code.weights))
            rows.extend((seed, x, f"dist_{i}", v) for i, v in enumerate(dist))
    out.csv("encodings.csv", ("seed", "x", "metric", "value"), rows)
    out.json("tables.json", tables)


COMMANDS: dict[str, Callable[[dict[str, Any], list[int], Output, int], None]] = {
    "estimate": cmd_estimate,
    "bias": cmd_bias,
    "train": cmd_train,
    "sweep-beta": cmd_sweep_beta,
    "drift": cmd_drift,
    "encode-demo": cmd_encode_demo,
}


# -- argument parsing --------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamembed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings for this subcommand")
    common.add_argument("--seed", default="0", help="seed list, e.g. 0,1,2 or 0-4 (default 0)")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<command> or ./{DEFAULT_OUT}/<command>)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="threads for the seed fan-out")

    streamed = argparse.ArgumentParser(add_help=False)
    streamed.add_argument("--stream", help="generator settings (.json) or data file (.csv)")
    streamed.add_argument("--length", type=int, help="generated stream length")

    modelled = argparse.ArgumentParser(add_help=False)
    modelled.add_argument("--lr", type=float, help="learning rate")
    modelled.add_argument("--optimizer", choices=("sgd", "adam"), help="default sgd")
    modelled.add_argument("--modulation", choices=("affine", "gating", "none"), help="default gating")
    modelled.add_argument("--model-set", action="append", metavar="KEY=VALUE", help="model config override (repeatable)")
    modelled.add_argument("--holdout", type=float, help="fraction of the stream tail held out for scoring")

    p = sub.add_parser("estimate", parents=[common, streamed], help="compare OS, RS and JRS quantile estimates")
    p.add_argument("--reservoir-size", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--column", help="numeric column to read from a CSV stream")

    p = sub.add_parser("bias", parents=[common], help="order-statistics bias under linear drift")
    p.add_argument("--alphas", type=_floats, help="comma-separated quantile levels")
    p.add_argument("--t", type=_ints, help="comma-separated batch counts")
    p.add_argument("--per-batch-n", type=int)
    p.add_argument("--reservoir-size", type=int)

    p = sub.add_parser("train", parents=[common, streamed, modelled], help="quantile vs value encoders")
    p.add_argument("--eval-every", type=int, help="score the holdout every N steps")
    p.add_argument("--encoders", type=lambda s: [v for v in s.split(",") if v], help="comma-separated: quantile,value,raw")

    p = sub.add_parser("sweep-beta", parents=[common, streamed, modelled], help="AUC/LogLoss per modulation beta")
    p.add_argument("--betas", type=_floats, help="comma-separated mixing coefficients")

    p = sub.add_parser("drift", parents=[common, streamed], help="PSI/KS against the first segment")
    p.add_argument("--segments", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--column", help="numeric column to read from a CSV stream")

    p = sub.add_parser("encode-demo", parents=[common, streamed], help="thermometer and value-space encodings")
    p.add_argument("--values", type=_floats)
    p.add_argument("--boundaries", type=_floats, help="explicit table instead of a reservoir estimate")
    p.add_argument("--M", type=int, dest="M")
    p.add_argument("--reservoir-size", type=int)
    return parser


def output_root(command: str, out: str | None) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(ENV_OUT) or DEFAULT_OUT) / command


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seeds = parse_seeds(args.seed)
        settings = resolve_settings(args.command, args)
        root = output_root(args.command, args.out)
        root.mkdir(parents=True, exist_ok=True)
        out = Output(root, args.command, settings, seeds)
        COMMANDS[args.command](settings, seeds, out, max(1, args.workers))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"streamembed {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in out.written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

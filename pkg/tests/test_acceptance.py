"""End-to-end acceptance checks, one per criterion.

Each ``criterion_N`` returns ``(passed, detail)``.  Under pytest the verdict
line is recorded (and repeated in the terminal summary) before asserting;
running the file directly just prints the ten lines.
"""

import filecmp
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

from streamembed import modulation as mod
from streamembed import streamlab as sl
from streamembed.model import (
    Batch,
    CTRModel,
    ModelConfig,
    Schema,
    dataset_from_stream,
    iter_batches,
    split_tail,
    train_stream,
)
from streamembed.modulation import AFFINE, GATING, NONE, ModulationParams
from streamembed.quantile_codec import QuantileTable, build_table, encode_many, encode_value_space, quantile_position
from streamembed.reservoir import JUMP, STANDARD, OrderStatsEstimator, Reservoir, sample_jump_gaps
from streamembed.rng import CounterStream

P_MIN = 0.01


def _fmt(ok):
    return "PASS" if ok else "FAIL"


# -- 1: inclusion probability -------------------------------------------------


def criterion_1():
    m, t, seeds, buckets = 100, 10_000, 10_000, 100
    idx = np.arange(t, dtype=float)
    parts, ok = [], True
    for mode in (STANDARD, JUMP):
        counts = np.zeros(buckets)
        for s in range(seeds):
            r = Reservoir(m, mode, s)
            r.extend(idx)
            counts += np.bincount((r.samples // (t // buckets)).astype(int), minlength=buckets)
        p = stats.chisquare(counts).pvalue
        ok &= p > P_MIN
        parts.append(f"{mode} chi2 p={p:.3g} (first bucket {counts[0] / counts.mean():.3f}x mean)")
    return ok, "; ".join(parts)


# -- 2: jump-length law -------------------------------------------------------


def _standard_gaps(t, m, n, rng):
    # Element t+i is admitted with probability m/(t+i); the gap counts skipped elements.
    gaps = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    i = 1
    while alive.size:
        hit = rng.uniform(size=alive.size) < m / (t + i)
        gaps[alive[hit]] = i - 1
        alive = alive[~hit]
        i += 1
    return gaps


def criterion_2():
    t, m, n = 1_000, 50, 100_000
    jump = sample_jump_gaps(t, m, CounterStream(2, 0).block(n))
    ref = _standard_gaps(t, m, n, np.random.default_rng(2))
    ks = stats.ks_2samp(jump, ref)
    ok_ks = ks.pvalue > P_MIN
    worst = 0.0
    for delta in (1, 10, 100):
        worst = max(worst, abs(float(np.mean(jump >= delta)) - (t / (t + delta)) ** m))
    ok_surv = worst <= 0.01
    detail = f"KS D={ks.statistic:.4f} p={ks.pvalue:.3g} [{_fmt(ok_ks)}]; survival max |err|={worst:.4f} [{_fmt(ok_surv)}]"
    return ok_ks and ok_surv, detail


# -- 3: write count and rng economy -------------------------------------------


def criterion_3():
    t, m, chunk = 10_000_000, 10_000, 1_000_000
    jump, std = Reservoir(m, JUMP, 3), Reservoir(m, STANDARD, 3)
    for i in range(t // chunk):
        values = np.random.default_rng(1000 + i).uniform(size=chunk)
        jump.extend(values)
        std.extend(values)
    target = m * (1 + math.log(t / m))
    rel = jump.writes / target - 1
    ratio = jump.rng_calls / std.rng_calls
    ok = abs(rel) <= 0.10 and ratio < 0.05
    return ok, f"writes={jump.writes} vs {target:.0f} ({rel:+.1%}); rng ratio={ratio:.2%}"


# -- 4: drift bias ------------------------------------------------------------


def criterion_4():
    alphas = [0.1, 0.25, 0.5, 0.75, 0.9]
    a, b, t, n, m, seeds = 0.0, 1.0, 10, 100_000, 100_000, range(20)
    os_err, rs_err, jrs_err = (np.zeros((len(seeds), len(alphas))) for _ in range(3))
    truth = np.array([a + al * (b - a) for al in alphas])
    for row, seed in enumerate(seeds):
        values = sl.generate(sl.StreamSpec(sl.DRIFTING_UNIFORM, t * n, seed, {"a": a, "b": b, "segments": t})).values
        est = OrderStatsEstimator(alphas)
        est.update_stream(values, n)
        os_err[row] = est.running_means - truth
        for out, mode in ((rs_err, STANDARD), (jrs_err, JUMP)):
            r = Reservoir(m, mode, seed)
            r.extend(values)
            out[row] = [r.estimate_quantile(al) for al in alphas] - truth
    closed = np.array([sl.closed_form_os_bias(al, a, b, t) for al in alphas])
    os_dev = np.abs(os_err.mean(axis=0) - closed)
    rs_bias, jrs_bias = rs_err.mean(axis=0), jrs_err.mean(axis=0)
    checks = [
        ("OS-closed", float(os_dev.max()), os_dev.max() <= 0.01),
        ("RS", float(np.abs(rs_bias).max()), np.abs(rs_bias).max() < 0.01),
        ("JRS", float(np.abs(jrs_bias).max()), np.abs(jrs_bias).max() < 0.01),
    ]
    detail = "; ".join(f"max|{name}|={v:.4f} [{_fmt(ok)}]" for name, v, ok in checks)
    detail += "; JRS bias by alpha=" + ",".join(f"{x:+.4f}" for x in jrs_bias)
    return all(ok for _, _, ok in checks), detail


# -- 5: estimator KL ordering -------------------------------------------------


def criterion_5():
    kl = {}
    for kind in (sl.CLUSTERED_INTEGER, sl.SPREAD_CONTINUOUS):
        spec = sl.StreamSpec(kind, 1_000_000, 5)
        rows = sl.compare_estimators(sl.generate(spec).values, spec.ground_truth(), 10_000, bins=100, seed=5)
        kl[kind] = {r.method: r.kl for r in rows}
    c, s = kl[sl.CLUSTERED_INTEGER], kl[sl.SPREAD_CONTINUOUS]
    ok_c = c["OS"] >= 100 * c["RS"] and c["OS"] >= 100 * c["JRS"]
    best = min(s["RS"], s["JRS"])
    ok_s = best < s["OS"] < 100 * best
    detail = (
        f"clustered OS/RS={c['OS'] / c['RS']:.0f}x OS/JRS={c['OS'] / c['JRS']:.0f}x [{_fmt(ok_c)}]; "
        f"spread OS={s['OS']:.4f} RS={s['RS']:.4f} JRS={s['JRS']:.4f} [{_fmt(ok_s)}]"
    )
    return ok_c and ok_s, detail


# -- 6: gradients -------------------------------------------------------------

H = 1e-6


def _rel_err(num, ana):
    scale = max(1e-7, np.max(np.abs(num)), np.max(np.abs(ana)))
    return float(np.max(np.abs(num - ana)) / scale)


def _central(loss, point):
    grads = {}
    for name, arr in point.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += H
            minus[idx] -= H
            g[idx] = (loss({**point, name: plus}) - loss({**point, name: minus})) / (2 * H)
        grads[name] = g
    return grads


def _thermo(rng, M, B):
    x = rng.uniform(0, M, size=B)
    return encode_many(x, QuantileTable(np.arange(M + 1, dtype=float)))


def _modulation_error(kind, rng):
    M, k, d, B = (int(v) for v in rng.integers(2, 6, size=4))
    beta = float(rng.uniform(0.05, 1.0))
    v = _thermo(rng, M, B)
    G = rng.normal(size=(B, d))
    point = {"E": rng.normal(size=(M, d))}
    if kind != NONE:
        rows = M * M if kind == AFFINE else M
        point["weight"] = rng.normal(size=(rows, k))
        point["e_f"] = rng.normal(size=(B, k))

    def run(p):
        params = ModulationParams(kind, beta, p["weight"]) if kind != NONE else ModulationParams(NONE, 0.0)
        return mod.forward(v, p.get("e_f"), params, p["E"])

    _, cache = run(point)
    ana = mod.backward(G, cache)
    num = _central(lambda p: float(np.sum(G * run(p)[0])), point)
    return max(_rel_err(num[n], ana[n]) for n in point)


def _model_error(rng):
    schema = Schema(("a", "b"), ("x", "y"), {"a": 3, "b": 4})
    modulation = [AFFINE, GATING, NONE][int(rng.integers(3))]
    encoder = ["quantile", "value", "raw"][int(rng.integers(3))]
    cfg = ModelConfig(
        d=int(rng.integers(2, 4)), M=int(rng.integers(2, 5)), m=60, hidden=(4, 3), l2=1e-3,
        beta=float(rng.uniform(0.05, 1.0)), modulation=modulation, encoder=encoder, seed=int(rng.integers(1000)),
    )

    def batch(n):
        cat = np.stack([rng.integers(0, schema.cardinality[c], n) for c in schema.categorical], axis=1)
        return Batch(cat, rng.lognormal(size=(n, 2)), (rng.uniform(size=n) < 0.4).astype(float))

    model = CTRModel(schema, cfg)
    model.observe(batch(150))
    # Zero-initialised biases put dead-ReLU samples exactly on the kink; check at a generic point.
    for k, v in model.params.items():
        model.params[k] = v + rng.normal(0.0, 0.1, size=v.shape)
    b = batch(5)
    _, ana = model.loss_and_grad(b)
    num = _central(lambda p: model.loss(b, p), dict(model.params))
    return max(_rel_err(num[n], ana[n]) for n in model.params)


def criterion_6():
    rng = np.random.default_rng(6)
    errors = {AFFINE: [], GATING: [], "aggregation": [], "model": []}
    for _ in range(25):
        errors[AFFINE].append(_modulation_error(AFFINE, rng))
        errors[GATING].append(_modulation_error(GATING, rng))
        errors["aggregation"].append(_modulation_error(NONE, rng))
        errors["model"].append(_model_error(rng))
    worst = {k: max(v) for k, v in errors.items()}
    ok = all(v < 1e-4 for v in worst.values())
    n = sum(len(v) for v in errors.values())
    return ok, f"{n} configs; worst rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


# -- 7: encoding properties ---------------------------------------------------


def criterion_7():
    rng = np.random.default_rng(7)
    mono_bad, cont_worst = 0, 0.0
    for _ in range(10_000):
        M = int(rng.integers(2, 21))
        b = np.cumsum(np.concatenate([[rng.uniform(-100, 100)], rng.uniform(0.1, 10, size=M)]))
        table = QuantileTable(b)
        lo, hi = np.sort(rng.uniform(b[0] - 5, b[-1] + 5, size=2))
        ea, eb = encode_many(np.array([lo, hi]), table)
        mono_bad += bool(np.any(ea > eb))
        j = int(rng.integers(1, M))
        left, mid, right = encode_many(np.array([np.nextafter(b[j], -np.inf), b[j], np.nextafter(b[j], np.inf)]), table)
        cont_worst = max(cont_worst, float(np.max(np.abs(left - mid))), float(np.max(np.abs(right - mid))))
    regress = encode_value_space(95.0, QuantileTable(np.array([0.0, 100.0, 105.0]))).tolist() == [95.0, 5.0, 10.0]
    r = Reservoir(10_000, JUMP, 7)
    r.extend(np.random.default_rng(70).uniform(size=1_000_000))
    x = np.random.default_rng(71).uniform(size=100_000)
    calib = float(np.max(np.abs(quantile_position(x, build_table(r, 10)) - x)))
    ok = mono_bad == 0 and cont_worst < 1e-10 and regress and calib < 0.03
    detail = (
        f"monotone violations={mono_bad}/10000; continuity max jump={cont_worst:.1e}; "
        f"[95,5,10] regression={'ok' if regress else 'wrong'}; calibration err={calib:.4f}"
    )
    return ok, detail


# -- 8: encoder and modulation comparison -------------------------------------


def criterion_8():
    seeds = range(5)
    q_auc, v_auc, g_auc = [], [], []
    for seed in seeds:
        schema, data = dataset_from_stream(sl.generate(sl.StreamSpec(sl.FIELD_CONDITIONAL, 100_000, seed)))
        train, test = split_tail(data, 0.2)
        base = ModelConfig(seed=seed, modulating_fields=("context",))

        def auc(**kw):
            cfg = ModelConfig.from_dict({**base.to_dict(), **kw})
            return train_stream(iter_batches(train, cfg.batch_size), schema, cfg, test).final.auc

        q_auc.append(auc(encoder="quantile", beta=0.0))
        v_auc.append(auc(encoder="value"))
        g_auc.append(auc(encoder="quantile", modulation=GATING, beta=0.5))
    q, v, g = np.array(q_auc), np.array(v_auc), np.array(g_auc)
    ok_enc = bool(np.all(q > v))
    wins = int(np.sum(g > q))
    p_sign = stats.binomtest(wins, len(q), 0.5, alternative="greater").pvalue
    ok_gate = p_sign < 0.05
    detail = (
        f"quantile>value in {int(np.sum(q > v))}/5 (mean {q.mean():.4f} vs {v.mean():.4f}) [{_fmt(ok_enc)}]; "
        f"gating beta=0.5>beta=0 in {wins}/5 sign-test p={p_sign:.3f} "
        f"(mean {g.mean():.4f} vs {q.mean():.4f}) [{_fmt(ok_gate)}]"
    )
    return ok_enc and ok_gate, detail


# -- 9: drift diagnostics -----------------------------------------------------


def criterion_9():
    seg = np.random.default_rng(9).normal(size=1_000)
    same = sl.drift_report(np.tile(seg, 10), 10)
    zero = bool(np.all(same.psi == 0) and np.all(same.ks == 0))
    periods = []
    for seed in range(5):
        spec = sl.StreamSpec(sl.PERIODIC_SHIFT, 100_000, seed)
        rep = sl.drift_report(sl.generate(spec).values, spec.num_segments)
        periods.append((sl.dominant_period(rep.psi[1:]), sl.dominant_period(rep.ks[1:])))
    want = sl.StreamSpec(sl.PERIODIC_SHIFT, 100_000, 0).params["period"]
    ok_period = all(p == want and k == want for p, k in periods)
    return zero and ok_period, f"identical segments zero={zero}; ACF peaks (psi,ks)={periods} want {want}"


# -- 10: CLI determinism ------------------------------------------------------

COMMANDS = ("estimate", "bias", "train", "sweep-beta", "drift", "encode-demo")


def criterion_10(tmp):
    bad = []
    for command in COMMANDS:
        for run in ("a", "b"):
            subprocess.run(
                [sys.executable, "-m", "streamembed.cli", command, "--seed", "0,1", "--out", f"{tmp}/{run}/{command}"],
                check=True, capture_output=True,
            )
        cmp = filecmp.dircmp(f"{tmp}/a/{command}", f"{tmp}/b/{command}")
        _, mismatch, errors = filecmp.cmpfiles(cmp.left, cmp.right, cmp.common_files, shallow=False)
        if mismatch or errors or cmp.left_only or cmp.right_only:
            bad.append(command)
    return not bad, f"{len(COMMANDS)} subcommands, seeds 0,1; differing: {bad or 'none'}"


# -- harness ------------------------------------------------------------------


def _line(n, fn, *args):
    start = time.perf_counter()
    ok, detail = fn(*args)
    return ok, f"criterion {n}: {_fmt(ok)} ({time.perf_counter() - start:.1f}s) {detail}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("n", range(1, 10))
def test_criterion(n, verdict):
    ok, line = _line(n, CRITERIA[n - 1])
    verdict(line)
    assert ok, line


def test_criterion_10(tmp_path, verdict):
    ok, line = _line(10, criterion_10, tmp_path)
    verdict(line)
    assert ok, line


if __name__ == "__main__":
    import tempfile

    for i, fn in enumerate(CRITERIA, 1):
        print(_line(i, fn)[1], flush=True)
    with tempfile.TemporaryDirectory() as tmp:
        print(_line(10, criterion_10, tmp)[1])

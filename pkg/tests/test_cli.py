import csv
import hashlib
import json

import numpy as np
import pytest

from streamembed import cli

SMALL = {
    "estimate": ["--length", "3000", "--reservoir-size", "300", "--bins", "10"],
    "bias": ["--alphas", "0.1,0.9", "--t", "1,3", "--per-batch-n", "500", "--reservoir-size", "200"],
    "train": ["--length", "1500", "--eval-every", "5", "--model-set", "hidden=[8]", "--model-set", "m=200"],
    "sweep-beta": ["--length", "1500", "--betas", "0,1", "--model-set", "m=200"],
    "drift": ["--length", "2000", "--segments", "20"],
    "encode-demo": ["--length", "500", "--M", "4"],
}
FILES = {
    "estimate": ["kl_report.csv", "tables.json"],
    "bias": ["bias_report.csv"],
    "train": ["train_metrics.csv"],
    "sweep-beta": ["beta_sweep.csv"],
    "drift": ["drift_series.csv", "drift_period.csv"],
    "encode-demo": ["encodings.csv", "tables.json"],
}


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    code = cli.main([argv[0], "--out", str(out), *argv[1:]])
    return code, out


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_parse_seeds():
    assert cli.parse_seeds("0") == [0]
    assert cli.parse_seeds("0,1,5") == [0, 1, 5]
    assert cli.parse_seeds("0-4") == [0, 1, 2, 3, 4]
    assert cli.parse_seeds("7, 2-3") == [7, 2, 3]
    for bad in ("", "a", "3-1", "1,1", "0-2,2", "-1"):
        with pytest.raises(cli.UsageError):
            cli.parse_seeds(bad)


def test_settings_hash_ignores_key_order():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert cli.settings_hash(a) == cli.settings_hash(b)
    assert cli.settings_hash(a) != cli.settings_hash({"x": 2, "y": [1, 2]})


def test_precedence_defaults_config_stream_flags(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"length": 111, "bins": 7, "stream": {"kind": "stationary_uniform", "params": {}}}))
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"kind": "drifting_uniform", "params": {"segments": 3}, "length": 222}))
    parser = cli.build_parser()

    s = cli.resolve_settings("estimate", parser.parse_args(["estimate"]))
    assert s == cli.DEFAULTS["estimate"]
    s = cli.resolve_settings("estimate", parser.parse_args(["estimate", "--config", str(config)]))
    assert (s["length"], s["bins"], s["stream"]["kind"]) == (111, 7, "stationary_uniform")
    s = cli.resolve_settings("estimate", parser.parse_args(["estimate", "--config", str(config), "--stream", str(spec)]))
    assert (s["length"], s["stream"]["kind"], s["stream"]["params"]) == (222, "drifting_uniform", {"segments": 3})
    s = cli.resolve_settings(
        "estimate", parser.parse_args(["estimate", "--config", str(config), "--stream", str(spec), "--length", "333", "--bins", "9"])
    )
    assert (s["length"], s["bins"]) == (333, 9)


def test_model_overrides():
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--model-set", "beta=0.25", "--model-set", "hidden=[4,2]", "--lr", "0.5", "--optimizer", "adam"])
    s = cli.resolve_settings("train", args)
    assert s["model"] == {"beta": 0.25, "hidden": [4, 2], "lr": 0.5, "optimizer": "adam"}
    with pytest.raises(cli.UsageError):
        cli.resolve_settings("train", parser.parse_args(["train", "--model-set", "beta"]))


@pytest.mark.parametrize("command", sorted(SMALL))
def test_commands_are_deterministic_and_annotated(tmp_path, command):
    code1, out1 = _run(tmp_path, "a", command, "--seed", "0-1", "--workers", "2", *SMALL[command])
    code2, out2 = _run(tmp_path, "b", command, "--seed", "0-1", "--workers", "1", *SMALL[command])
    assert code1 == code2 == 0
    for name in FILES[command]:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
        meta = json.loads((out1 / f"{name}.meta.json").read_text())
        assert meta["command"] == command and meta["seeds"] == [0, 1] and meta["file"] == name
        blob = json.dumps(meta["config"], sort_keys=True, separators=(",", ":")).encode()
        assert meta["config_sha256"] == hashlib.sha256(blob).hexdigest()


def test_estimate_report_contents(tmp_path):
    code, out = _run(tmp_path, "e", "estimate", "--seed", "3", *SMALL["estimate"])
    assert code == 0
    rows = _rows(out / "kl_report.csv")
    assert {r["method"] for r in rows} == {"OS", "RS", "JRS"}
    kl = {r["method"]: float(r["value"]) for r in rows if r["metric"] == "kl"}
    assert all(v >= 0 for v in kl.values())
    ratio = [float(r["value"]) for r in rows if r["metric"] == "rng_call_ratio"]
    assert len(ratio) == 1 and 0 < ratio[0] < 1
    tables = json.loads((out / "tables.json").read_text())
    assert tables


def test_csv_stream_input(tmp_path):
    data = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    lines = ["price,other"] + [f"{float(v)!r},1" for v in rng.lognormal(size=2000)]
    data.write_text("\n".join(lines) + "\n")
    code, out = _run(tmp_path, "c", "estimate", "--stream", str(data), "--column", "price", "--reservoir-size", "200", "--bins", "10")
    assert code == 0 and _rows(out / "kl_report.csv")
    code, out = _run(tmp_path, "d", "drift", "--stream", str(data), "--column", "price", "--segments", "10")
    assert code == 0
    assert len([r for r in _rows(out / "drift_series.csv") if r["metric"] == "psi"]) == 10


def test_encode_demo_explicit_boundaries(tmp_path):
    code, out = _run(tmp_path, "x", "encode-demo", "--boundaries", "0,1,2,3", "--values", "1.5")
    assert code == 0
    rows = {r["metric"]: r["value"] for r in _rows(out / "encodings.csv")}
    assert rows["bin"] == "1" and float(rows["fraction"]) == 0.5 and float(rows["quantile"]) == 0.5


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert cli.main(["estimate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert cli.main(["estimate", "--stream", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["estimate", "--seed", "2-1", "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit):
        cli.main(["nope"])


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env"))
    assert cli.main(["encode-demo", *SMALL["encode-demo"]]) == 0
    assert (tmp_path / "env" / "encode-demo" / "encodings.csv").exists()
    monkeypatch.delenv(cli.ENV_OUT)
    assert cli.output_root("drift", None) == cli.Path(cli.DEFAULT_OUT) / "drift"

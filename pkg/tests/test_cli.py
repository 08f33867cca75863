import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from ntklab import cli
from ntklab.serialize import SCHEMA_NAMES, dumps, fmt_float, load_schema


@pytest.fixture
def files(tmp_path):
    cfg = {"architecture": {"n0": 2, "depth": 3, "beta": 1.0}, "activation": "relu", "seed": 5}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    (tmp_path / "data.csv").write_text("1.0,0.5\n-0.3,0.8\n0.2,-1.0\n0.9,0.1\n")
    return tmp_path


def run(*argv):
    return cli.dispatch([str(a) for a in argv])


def validate(path, schema):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, load_schema(schema))
    return doc


def test_schemas_load():
    for name in SCHEMA_NAMES:
        jsonschema.Draft202012Validator.check_schema(load_schema(name))


def test_help_exits_zero(capsys):
    assert run("spectrum", "--help") == 0
    assert "--tol" in capsys.readouterr().out
    out = subprocess.run([sys.executable, "-m", "ntklab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "kernel" in out.stdout


def test_usage_errors(capsys):
    assert run() == 1
    assert run("bogus") == 1
    assert run("findiff") == 1
    assert run("findiff", "degree") == 1
    assert "usage" in capsys.readouterr().err


def test_kernel_run(files):
    out = files / "k.json"
    assert run("kernel", "--config", files / "cfg.json", "--data", files / "data.csv", "--out", out) == 0
    doc = validate(out, "kernels")
    kinds = [(m["kind"], m["layer"]) for m in doc["matrices"]]
    assert ("theta", 3) in kinds and doc["n"] == 4


def test_spectrum_run(files):
    out = files / "r.json"
    assert run("spectrum", "--config", files / "cfg.json", "--data", files / "data.csv",
               "--depth", 4, "--tol", "1e-8", "--out", out) == 0
    reps = validate(out, "spectrum")
    thetas = [r for r in reps if r["matrix_kind"] == "theta" and r["layer"] >= 2]
    assert len(thetas) == 3 and all(r["verdict"] == "strictly_positive_definite" for r in thetas)


def test_empirical_run(files):
    out = files / "sweep.csv"
    assert run("empirical", "--config", files / "cfg.json", "--data", files / "data.csv",
               "--widths", "16,64", "--samples", 3, "--seed", 7, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "width,sample_count,frobenius_error_vs_exact,median_stderr"
    assert len(lines) == 3 and lines[1].startswith("16,3,")


def test_train_run(files):
    out = files / "loss.csv"
    assert run("train", "--config", files / "cfg.json", "--data", files / "data.csv", "--width", 32,
               "--steps", 50, "--lr", "auto", "--seed", 11, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 52
    losses = [float(l.split(",")[1]) for l in lines[1:]]
    assert losses[-1] < losses[0]


def test_train_divergence_exit_2(files, capsys):
    assert run("train", "--config", files / "cfg.json", "--data", files / "data.csv", "--width", 16,
               "--steps", 500, "--lr", "100", "--out", files / "x.csv") == 2
    assert "numerical failure" in capsys.readouterr().err


def test_flow_run(files):
    k = files / "k.json"
    run("kernel", "--config", files / "cfg.json", "--data", files / "data.csv", "--out", k)
    out = files / "flow.csv"
    assert run("flow", "--theta", k, "--t0", 0, "--t1", 10, "--points", 20, "--out", out) == 0
    rows = [l.split(",") for l in out.read_text().splitlines()]
    assert rows[0] == ["t", "loss", "bound"] and len(rows) == 21
    assert all(float(r[1]) <= float(r[2]) * (1 + 1e-9) + 1e-300 for r in rows[1:])


def test_flow_corrupted_matrix_exit_2(files, capsys):
    k = files / "k.json"
    run("kernel", "--config", files / "cfg.json", "--data", files / "data.csv", "--out", k)
    doc = json.loads(k.read_text())
    for m in doc["matrices"]:
        if m["kind"] == "theta":
            m["values"][1][2] = m["values"][2][1] = 50.0
    bad = files / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run("flow", "--theta", bad, "--out", files / "f.csv") == 2
    err = capsys.readouterr().err
    assert "location (1, 2)" in err


def test_findiff_runs(files):
    out = files / "deg.json"
    assert run("findiff", "degree", "--fn", "tanh", "--domain", "-2:2", "--max-order", 8, "--out", out) == 0
    doc = validate(out, "findiff_degree")
    assert doc["polynomial"] is False and doc["domain"] == [-2.0, 2.0]
    out2 = files / "deg2.json"
    assert run("findiff", "degree", "--fn", "poly:0,1,3", "--out", out2) == 0
    assert validate(out2, "findiff_degree")["degree"] == 2
    out3 = files / "id.json"
    assert run("findiff", "identities", "--trials", 100, "--seed", 3, "--out", out3) == 0
    assert validate(out3, "findiff_identities")["passed"] is True


def test_bad_row_reports_line(files, capsys):
    (files / "bad.csv").write_text("1.0,2.0\n1,a\n")
    with pytest.raises(cli.DataError) as info:
        cli.load_training_set(files / "bad.csv", 2)
    assert info.value.line == 2
    assert run("spectrum", "--config", files / "cfg.json", "--data", files / "bad.csv") == 1
    assert "line 2" in capsys.readouterr().err


def test_load_training_set(files):
    ts = cli.load_training_set(files / "data.csv", 2)
    assert ts.N == 4 and ts.n0 == 2
    (files / "dup.csv").write_text("1,2\n3,4\n1,2\n")
    assert any("identical" in w for w in cli.load_training_set(files / "dup.csv", 2).warnings)
    (files / "prop.csv").write_text("1,2\n2,4\n")
    assert cli.load_training_set(files / "prop.csv", 2, beta=0.0).warnings
    with pytest.raises(cli.DataError):
        cli.load_training_set(files / "data.csv", 3)


def test_config_rejects_unknown_keys(files, capsys):
    cfg = {"architecture": {"n0": 2}, "activation": "relu", "colour": "red"}
    (files / "c2.json").write_text(json.dumps(cfg))
    with pytest.raises(cli.ValidationError):
        cli.load_config(files / "c2.json")
    assert run("kernel", "--config", files / "c2.json", "--data", files / "data.csv") == 1
    (files / "c3.json").write_text(json.dumps({"architecture": {"n0": 2, "rho_w": 0}, "activation": "relu"}))
    with pytest.raises(cli.ValidationError):
        cli.load_config(files / "c3.json")
    (files / "c4.json").write_text(json.dumps({"architecture": {"n0": 2}, "activation": "sine"}))
    with pytest.raises(cli.ValidationError):
        cli.load_config(files / "c4.json")


def test_config_roundtrip(files):
    rc = cli.load_config(files / "cfg.json")
    assert cli.RunConfig.from_dict(rc.as_dict()).as_dict() == rc.as_dict()


def test_serialisation_format():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert float(fmt_float(1 / 3)) == 1 / 3
    assert dumps({"a": float("nan"), "b": [1.0, 2]}) == '{\n  "a": null,\n  "b": [1, 2]\n}\n'


def test_byte_identical_reruns(files):
    cmds = [
        ["kernel", "--config", files / "cfg.json", "--data", files / "data.csv"],
        ["spectrum", "--config", files / "cfg.json", "--data", files / "data.csv"],
        ["empirical", "--config", files / "cfg.json", "--data", files / "data.csv", "--widths", "8,16", "--samples", 2],
        ["train", "--config", files / "cfg.json", "--data", files / "data.csv", "--width", 8, "--steps", 20],
        ["findiff", "degree", "--fn", "relu", "--domain", "-1:1"],
        ["findiff", "identities", "--trials", 30, "--seed", 3],
    ]
    for i, c in enumerate(cmds):
        texts = []
        for r in range(2):
            out = files / f"o{i}_{r}"
            assert run(*c, "--out", out) == 0
            texts.append(out.read_bytes())
        assert texts[0] == texts[1]

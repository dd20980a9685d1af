"""End-to-end checks for the command line front end.

Everything runs in-process through cli.main() with a shrunken config so the
whole pipeline stays fast.  One module-scoped run is shared by the assertion
tests; reruns for determinism reuse the same seeds.
"""

import contextlib
import io
import json

import numpy as np
import pytest

from cascal import cli, metrics
from cascal.core import LogitsTable, derive_predictions, read_logits_file, write_logits_file

SMALL_CFG = {
    "n_val": 1500,
    "n_test": 2000,
    "n_meta": 1200,
    "epochs": 40,
    "hidden": [32, 16],
}


def run_cli(argv):
    out = io.StringIO()
    err = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def wrote_paths(stdout):
    return [line[len("wrote ") :] for line in stdout.splitlines() if line.startswith("wrote ")]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL_CFG))
    data = root / "data"
    meta = root / "meta"
    model = root / "model.casm"

    steps = {}
    steps["gen"] = run_cli(["gen", "--config", cfg_path, "--out", data])
    steps["metasets"] = run_cli(
        ["metasets", "--config", cfg_path, "--world", data / "world.json", "--out", meta]
    )
    steps["train"] = run_cli(
        ["train", "--config", cfg_path, "--metasets", meta, "--out", model]
    )
    for name, (code, _, err) in steps.items():
        assert code == cli.EXIT_OK, f"{name} failed: {err}"
    return {"root": root, "cfg": cfg_path, "data": data, "meta": meta, "model": model, "steps": steps}


def test_gen_writes_world_val_and_tests(pipeline):
    data = pipeline["data"]
    assert (data / "world.json").exists()
    assert (data / "val.lgts").exists()
    names = sorted(p.name for p in (data / "tests").glob("*.lgts"))
    assert names == [
        "test-covariance-scale-s5.lgts",
        "test-feature-noise-s4.lgts",
        "test-feature-noise-s5.lgts",
        "test-prior-shift-s3.lgts",
    ]
    echoed = wrote_paths(pipeline["steps"]["gen"][1])
    assert len(echoed) == 6  # world + val + four test tables
    val = read_logits_file(data / "val.lgts")
    assert val.n_instances == SMALL_CFG["n_val"]
    assert val.n_classes == 10


def test_metasets_manifest_and_members(pipeline):
    meta = pipeline["meta"]
    manifest = json.loads((meta / "manifest.json").read_text())
    assert len(manifest) == 12
    assert len(list(meta.glob("*.lgts"))) == 12
    kinds = {m["kind"] for m in manifest}
    assert kinds == {"feature-noise", "mean-drift", "covariance-scale", "rotation"}


def test_train_writes_model_and_loss_curve(pipeline):
    model = pipeline["model"]
    assert model.exists()
    loss_lines = (model.parent / (model.name + ".loss.csv")).read_text().splitlines()
    assert loss_lines[0] == "epoch,loss"
    assert len(loss_lines) == SMALL_CFG["epochs"] + 1
    losses = [float(l.split(",")[1]) for l in loss_lines[1:]]
    assert losses[-1] < losses[0]
    assert "final mean training loss" in pipeline["steps"]["train"][1]


def test_calibrate_cascade_output(pipeline, tmp_path):
    src = pipeline["data"] / "tests" / "test-feature-noise-s4.lgts"
    out = tmp_path / "cal.lgts"
    code, stdout, _ = run_cli(
        ["calibrate", "--method", "cascade", "--model", pipeline["model"], "--data", src, "--out", out]
    )
    assert code == cli.EXIT_OK
    temps = json.loads((tmp_path / "cal.lgts.temps.json").read_text())
    assert len(temps["class_temps"]) == 10
    assert len(temps["bin_temps"]) == 10
    assert all(t >= 0.05 for t in temps["class_temps"] + temps["bin_temps"])

    before = derive_predictions(read_logits_file(src))
    after = derive_predictions(read_logits_file(out))
    # calibration may not move argmax, and on this shift it should help
    assert np.array_equal(before.pred, after.pred)
    assert metrics.ece(after, 15) < metrics.ece(before, 15)


def test_calibrate_baseline_accepts_file_or_directory(pipeline, tmp_path):
    src = pipeline["data"] / "tests" / "test-feature-noise-s5.lgts"
    out_clean = tmp_path / "ts.lgts"
    out_pooled = tmp_path / "tsp.lgts"
    code, _, _ = run_cli(
        ["calibrate", "--method", "ts", "--fit", pipeline["data"] / "val.lgts", "--data", src, "--out", out_clean]
    )
    assert code == cli.EXIT_OK
    code, _, _ = run_cli(
        ["calibrate", "--method", "ts", "--fit", pipeline["meta"], "--data", src, "--out", out_pooled]
    )
    assert code == cli.EXIT_OK
    a = read_logits_file(out_clean)
    b = read_logits_file(out_pooled)
    # pooled fit sees shifted data, so it picks a different temperature
    assert not np.allclose(a.logits, b.logits)
    assert not (tmp_path / "ts.lgts.temps.json").exists()


def test_eval_reports_metrics_and_artifacts(pipeline, tmp_path):
    src = pipeline["data"] / "val.lgts"
    csv = tmp_path / "bins.csv"
    svg = tmp_path / "rel.svg"
    code, stdout, _ = run_cli(["eval", "--data", src, "--out", csv, "--svg", svg])
    assert code == cli.EXIT_OK
    printed = {}
    for line in stdout.splitlines():
        if "=" in line and not line.startswith(("table", "wrote")):
            k, v = line.split("=")
            printed[k] = float(v)
    view = derive_predictions(read_logits_file(src))
    assert printed["ece"] == pytest.approx(metrics.ece(view, 15), abs=1e-9)
    assert printed["accuracy"] == pytest.approx(metrics.accuracy(view), abs=1e-9)
    lines = csv.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count,conf,acc"
    assert len(lines) == 16
    assert svg.read_text().startswith("<svg")


def test_report_method_grid(pipeline, tmp_path):
    out = tmp_path / "report.csv"
    code, _, err = run_cli(
        [
            "report",
            "--config", pipeline["cfg"],
            "--val", pipeline["data"] / "val.lgts",
            "--metasets", pipeline["meta"],
            "--tests", pipeline["data"] / "tests",
            "--model", pipeline["model"],
            "--out", out,
        ]
    )
    assert code == cli.EXIT_OK, err
    lines = out.read_text().splitlines()
    assert lines[0] == "method,test_set,ece,sce,accuracy,nll"
    rows = [l.split(",") for l in lines[1:]]
    methods = {r[0] for r in rows}
    assert methods == {
        "Base", "TS", "ETS", "IR", "IRM", "TS-IR",
        "TS-P", "ETS-P", "IR-P", "IRM-P", "TS-IR-P", "Ours",
    }
    assert len(rows) == 12 * 4
    # every method leaves predictions alone, so accuracy matches per test set
    for name in {r[1] for r in rows}:
        accs = {r[4] for r in rows if r[1] == name}
        assert len(accs) == 1
    for r in rows:
        assert 0.0 <= float(r[2]) <= 1.0


def test_sweep_table(pipeline, tmp_path):
    cfg = tmp_path / "sweep_cfg.json"
    cfg.write_text(json.dumps({**SMALL_CFG, "epochs": 4}))
    out = tmp_path / "sweep.csv"
    code, stdout, _ = run_cli(
        ["sweep", "--config", cfg, "--metasets", pipeline["meta"],
         "--tests", pipeline["data"] / "tests", "--out", out]
    )
    assert code == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "lambda,test_set,ece"
    assert len(lines) == 1 + 6 * 4
    lams = {l.split(",")[0] for l in lines[1:]}
    assert lams == {"0", "0.2", "0.4", "0.6", "0.8", "1"}
    assert stdout.count("swept lambda=") == 6


def test_rerun_is_byte_identical(pipeline, tmp_path):
    data2 = tmp_path / "data2"
    code, _, _ = run_cli(["gen", "--config", pipeline["cfg"], "--out", data2])
    assert code == cli.EXIT_OK
    for rel in ["val.lgts", "tests/test-feature-noise-s4.lgts"]:
        assert (data2 / rel).read_bytes() == (pipeline["data"] / rel).read_bytes()

    model2 = tmp_path / "model2.casm"
    code, _, _ = run_cli(
        ["train", "--config", pipeline["cfg"], "--metasets", pipeline["meta"], "--out", model2]
    )
    assert code == cli.EXIT_OK
    first = pipeline["model"]
    assert model2.read_bytes() == first.read_bytes()
    assert (tmp_path / "model2.casm.loss.csv").read_bytes() == (
        first.parent / (first.name + ".loss.csv")
    ).read_bytes()


def test_exit_code_config_errors(pipeline, tmp_path):
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"n_vall": 7}))
    code, _, err = run_cli(["gen", "--config", bad_cfg, "--out", tmp_path / "x"])
    assert code == cli.EXIT_CONFIG and "unknown config keys" in err

    code, _, _ = run_cli(
        ["train", "--config", pipeline["cfg"], "--metasets", pipeline["meta"],
         "--out", tmp_path / "m.casm", "--lambda", "1.5"]
    )
    assert code == cli.EXIT_CONFIG

    code, _, err = run_cli(
        ["train", "--config", pipeline["cfg"], "--metasets", pipeline["meta"],
         "--out", tmp_path / "m.casm", "--ablate", "everything"]
    )
    assert code == cli.EXIT_CONFIG and "unknown ablation" in err

    code, _, _ = run_cli(
        ["calibrate", "--method", "ts", "--data", pipeline["data"] / "val.lgts", "--out", tmp_path / "o.lgts"]
    )
    assert code == cli.EXIT_CONFIG  # --fit missing


def test_exit_code_missing_inputs(pipeline, tmp_path):
    code, _, _ = run_cli(["gen", "--config", tmp_path / "nope.json", "--out", tmp_path / "x"])
    assert code == cli.EXIT_MISSING

    code, _, _ = run_cli(
        ["calibrate", "--method", "cascade", "--model", pipeline["model"],
         "--data", tmp_path / "nope.lgts", "--out", tmp_path / "o.lgts"]
    )
    assert code == cli.EXIT_MISSING

    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run_cli(
        ["report", "--val", pipeline["data"] / "val.lgts", "--metasets", pipeline["meta"],
         "--tests", empty, "--model", pipeline["model"], "--out", tmp_path / "r.csv"]
    )
    assert code == cli.EXIT_MISSING and "no .lgts files" in err


def test_exit_code_shape_mismatch(pipeline, tmp_path):
    rng = np.random.default_rng(7)
    small = LogitsTable(rng.normal(size=(40, 3)), rng.integers(0, 3, size=40), name="tiny")
    p = tmp_path / "tiny.lgts"
    write_logits_file(small, p)
    code, _, err = run_cli(
        ["calibrate", "--method", "cascade", "--model", pipeline["model"],
         "--data", p, "--out", tmp_path / "o.lgts"]
    )
    assert code == cli.EXIT_MISMATCH
    assert "3" in err and "10" in err


def test_exit_code_malformed_files(pipeline, tmp_path):
    junk = tmp_path / "junk.lgts"
    junk.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    code, _, _ = run_cli(["eval", "--data", junk])
    assert code == cli.EXIT_FORMAT

    raw = bytearray(pipeline["model"].read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    bad_model = tmp_path / "bad.casm"
    bad_model.write_bytes(bytes(raw))
    code, _, _ = run_cli(
        ["calibrate", "--method", "cascade", "--model", bad_model,
         "--data", pipeline["data"] / "val.lgts", "--out", tmp_path / "o.lgts"]
    )
    assert code == cli.EXIT_FORMAT


def test_argparse_rejects_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rmfnl.cli import format_table, main, summarize


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)["error"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--m", "60", "--seed", "2", "--out", str(out)]) == 0
    return out


def test_synth_writes_files(synth_dir):
    spec = json.loads((synth_dir / "spec.json").read_text())
    assert spec["m"] == 60 and spec["seed"] == 2
    lines = (synth_dir / "train.tsv").read_text().splitlines()
    assert len(lines) == spec["train_nnz"]
    assert spec["train_nnz"] + spec["validation_nnz"] + spec["test_nnz"] == 60 * 60


def test_fit_on_files_then_evaluate(synth_dir, tmp_path, capsys):
    out = tmp_path / "fit"
    code = main(["fit", "--input", str(synth_dir / "train.tsv"), "--test", str(synth_dir / "test.tsv"),
                 "--loss", "lsp", "--theta", "1", "--rank", "5", "--lambda", "auto",
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"rmse", "objective", "cpu_seconds"} <= {k.split("_")[-1] if k.startswith("test_") else k
                                                   for k in summary}
    assert summary["test_rmse"] < 1.0
    for name in ("U.txt", "V.txt", "trace.csv", "trace.json", "trace_long.csv", "trace.png"):
        assert (out / name).exists()
    capsys.readouterr()
    assert main(["evaluate", "--factors", str(out), "--mask", str(synth_dir / "test.tsv"),
                 "--out", str(tmp_path / "ev")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["test"]["rmse"] == pytest.approx(summary["test_rmse"], rel=1e-12)


def test_fit_synthetic_l1_matches_library(tmp_path):
    from rmfnl import RmfnlConfig, SpectralInit, fit, generate_synthetic, make_penalty
    from rmfnl.workbench import SyntheticSpec

    out = tmp_path / "l1"
    assert main(["fit", "--m", "50", "--loss", "l1", "--seed", "1", "--no-plots", "--out", str(out)]) == 0
    assert not (out / "trace.png").exists()
    b = generate_synthetic(SyntheticSpec(m=50, seed=1))
    _, trace = fit(b.train, RmfnlConfig(penalty=make_penalty("l1"), init=SpectralInit(1)))
    rows = list(csv.DictReader((out / "trace.csv").open()))
    assert [float(r["objective"]) for r in rows] == trace.objectives.tolist()


def test_missing_input_is_io_error(tmp_path, capsys):
    code = main(["fit", "--input", str(tmp_path / "nope.tsv"), "--out", str(tmp_path)])
    assert code == 3
    assert _error(capsys)["code"] == "io"


def test_usage_errors(capsys):
    assert main(["fit", "--lambda", "lots"]) == 2
    assert _error(capsys)["code"] == "usage"
    assert main(["frobnicate"]) == 2
    assert main(["bench", "--losses", "lsp,huber"]) == 2
    assert "huber" in _error(capsys)["message"]
    assert main(["bench", "--reps", "0"]) == 2


def test_library_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1\t1\t5\n1\t2\n")
    assert main(["fit", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = _error(capsys)
    assert err["code"] == "parse" and "line 2" in err["message"]
    assert main(["fit", "--m", "30", "--lambda", "-1", "--out", str(tmp_path / "o")]) == 1
    assert _error(capsys)["code"] == "parameter"


def test_attack_command(tmp_path, capsys):
    src = tmp_path / "r.tsv"
    rng = np.random.default_rng(0)
    with src.open("w") as fh:
        for u in range(1, 21):
            for i in range(1, 41):
                if rng.random() < 0.5 or i == u:
                    fh.write(f"{u}\t{i}\t{rng.integers(1, 6)}\n")
    assert main(["attack", "--input", str(src), "--fraction", "0.05", "--out", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "attack.json").read_text())
    assert len(info["items_with_changes"]) <= 2
    assert len((tmp_path / "attacked.tsv").read_text().splitlines()) == len(src.read_text().splitlines())


def _bench(out, *extra):
    return main(["bench", "--m", "40", "--reps", "2", "--losses", "lsp,l1,l2", "--seed", "3",
                 "--max-outer", "20", "--out", str(out), *extra])


def _drop_timing(path):
    rows = list(csv.reader(path.open()))
    keep = [i for i, h in enumerate(rows[0]) if not h.startswith("cpu")]
    return [[r[i] for i in keep] for r in rows]


def test_bench_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _bench(a) == 0
    assert _bench(b, "--jobs", "2", "--no-plots") == 0
    for name in ("runs.csv", "summary.csv"):
        assert _drop_timing(a / name) == _drop_timing(b / name)
    assert (a / "traces_long.csv").read_bytes() == (b / "traces_long.csv").read_bytes()
    runs = list(csv.DictReader((a / "runs.csv").open()))
    assert [(r["method"], r["seed"]) for r in runs] == [
        ("lsp", "3"), ("lsp", "4"), ("l1", "3"), ("l1", "4"), ("l2", "3"), ("l2", "4")]
    assert all(r["status"] == "ok" for r in runs)
    header = next(csv.reader((a / "traces_long.csv").open()))
    assert header == ["run", "iter", "metric", "value"]
    for name in ("bench_rmse.png", "convergence_rmse.png", "convergence_objective.png"):
        assert (a / name).stat().st_size > 0
    assert not (b / "bench_rmse.png").exists()
    assert "±" in (a / "summary.txt").read_text()


def test_single_rep_std_is_zero():
    rows = [{"method": "lsp", "status": "ok", "rmse": 0.1, "mae": 0.05, "cpu_seconds": 1.0}]
    (s,) = summarize(rows, ["lsp"])
    assert s["rmse_std"] == 0.0 and s["mae_std"] == 0.0 and s["cpu_std"] == 0.0
    assert "0.1000±0.0000" in format_table([s])


def test_failed_cells_are_recorded():
    rows = [{"method": "lsp", "status": "error:consistency", "rmse": float("nan"), "mae": float("nan"),
             "cpu_seconds": 0.0},
            {"method": "lsp", "status": "ok", "rmse": 0.2, "mae": 0.1, "cpu_seconds": 1.0}]
    (s,) = summarize(rows, ["lsp"])
    assert s["failures"] == 1 and s["rmse_mean"] == 0.2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rmfnl.cli", "evaluate", "--factors",
                           str(tmp_path / "none"), "--mask", str(tmp_path / "none.tsv")],
                          capture_output=True, text=True, env={"RMFNL_LOG": "debug", "PATH": ""})
    assert proc.returncode == 3
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"]["code"] == "io"

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from payloadmine.cli import main


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    spec = root / "spec.txt"
    spec.write_text("families=f:2:4,g:1:3\nlibraries=2\nseed=5\n")
    assert main(["gen", "--out", str(root / "data"), "--spec", str(spec)]) == 0
    return root / "data"


def test_gen_then_run(generated, tmp_path, capsys):
    assert main(["run", "--corpus", str(generated / "corpus"), "--libs", str(generated / "libs"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cluster 1:")
    assert main(["eval", "--out", str(tmp_path), "--truth", str(generated / "truth.tsv")]) == 0
    lines = dict(l.split("\t") for l in capsys.readouterr().out.splitlines())
    assert float(lines["precision"]) == 1.0 and float(lines["recall"]) == 1.0


def test_stage_by_stage_with_config(generated, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"corpus={generated / 'corpus'}\nlibs={generated / 'libs'}\ntheta=0.5\nmin-k=60\n")
    out = tmp_path / "out"
    for stage in ("ingest", "fingerprint", "strip", "candidates", "cluster", "mine", "reconstruct"):
        assert main([stage, "--out", str(out), "--config", str(cfg), "--min-k", "65"]) == 0
    params = json.loads((out / "manifest.json").read_text())["params"]
    assert params["theta"] == 0.5 and params["min_k"] == 65
    assert (out / "reconstruct").is_dir()


def test_compare_minhash_with_exact(generated, tmp_path, capsys):
    exact, approx = tmp_path / "exact", tmp_path / "mh"
    common = ["--corpus", str(generated / "corpus"), "--libs", str(generated / "libs")]
    assert main(["run", "--out", str(exact), *common]) == 0
    assert main(["cluster", "--out", str(approx), "--input", str(exact), "--opt", "minhash"]) == 0
    assert main(["mine", "--out", str(approx), "--input", str(exact)]) == 0
    capsys.readouterr()
    assert main(["eval", "--out", str(approx), "--input", str(exact), "--compare", str(exact)]) == 0
    lines = dict(l.split("\t") for l in capsys.readouterr().out.splitlines())
    assert float(lines["precision"]) >= 0.98 and float(lines["recall"]) >= 0.98


def test_sweep_theta_table(generated, tmp_path, capsys):
    common = ["--corpus", str(generated / "corpus"), "--libs", str(generated / "libs"), "--out", str(tmp_path)]
    assert main(["run", *common]) == 0
    capsys.readouterr()
    assert main(["eval", "--out", str(tmp_path), "--truth", str(generated / "truth.tsv"), "--sweep-theta", "0.5:0.95:0.05"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].split("\t") == ["theta", "precision", "recall", "f1", "clusters"]
    assert [r.split("\t")[0] for r in rows[1:]] == [f"{0.5 + 0.05 * i:.2f}" for i in range(10)]


def test_missing_upstream_exit_code(tmp_path, capsys):
    assert main(["mine", "--out", str(tmp_path)]) == 2
    assert "run the 'candidates' stage first" in capsys.readouterr().err


def test_bad_sweep_argument(tmp_path):
    with pytest.raises(SystemExit):
        main(["eval", "--out", str(tmp_path), "--sweep-theta", "0.9:0.5:0.1"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "payloadmine", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "payloadmine" in res.stdout

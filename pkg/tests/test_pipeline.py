from __future__ import annotations

import json

import pytest

from payloadmine.evalgen import SynthSpec, generate_corpus
from payloadmine.pipeline import (
    STAGES,
    PipelineError,
    RunConfig,
    Workspace,
    format_app_clusters,
    parse_app_clusters,
    parse_config_file,
    run,
)

REPORTS = ("mining.json", "mining.txt", "app_clusters.tsv", "clusters.tsv", "strip.tsv", "apps.txt")


@pytest.fixture(scope="module")
def five_apps(tmp_path_factory):
    root = tmp_path_factory.mktemp("five")
    spec = SynthSpec(families=[("shared", 1, 3), ("solo1", 1, 1), ("solo2", 1, 1)], libraries=3)
    generate_corpus(spec).write(root)
    return root


def cfg_for(root, out, **kw) -> RunConfig:
    return RunConfig(out=out, corpus=root / "corpus", libs=root / "libs", **kw)


def test_five_app_run(five_apps, tmp_path):
    result = run(cfg_for(five_apps, tmp_path / "out"))
    assert result.app_clusters == [["app000", "app001", "app002"], ["app003"], ["app004"]]
    sel = result.mining.selected[0]
    assert sel.stats.l == 3 and sel.stats.k >= 70
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert all(manifest["stages"][s]["status"] == "complete" for s in STAGES)
    assert manifest["params"]["theta"] == 0.85
    assert any(k.startswith("corpus/") for k in manifest["inputs"])
    assert (tmp_path / "out" / "reconstruct" / "cluster_001.txt").read_text().startswith("# app app000")


@pytest.mark.parametrize("opt", ["minhash", "prototype"])
def test_opt_levels_share_schema(five_apps, tmp_path, opt):
    base = run(cfg_for(five_apps, tmp_path / "none"))
    other = run(cfg_for(five_apps, tmp_path / opt, opt=opt))
    assert other.app_clusters == base.app_clusters
    assert sorted(json.loads((tmp_path / opt / "mining.json").read_text())) == sorted(
        json.loads((tmp_path / "none" / "mining.json").read_text())
    )


def test_repeat_runs_are_identical(five_apps, tmp_path):
    run(cfg_for(five_apps, tmp_path / "a", opt="minhash"))
    run(cfg_for(five_apps, tmp_path / "b", opt="minhash"))
    for name in REPORTS + ("candidates.cpv.gz", "stripped.fpv.gz", "signatures.mhs"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_single_app_is_unclustered(tmp_path):
    corpus = generate_corpus(SynthSpec(families=[("f", 1, 1)], libraries=0))
    corpus.write(tmp_path / "c")
    result = run(RunConfig(out=tmp_path / "out", corpus=tmp_path / "c" / "corpus"))
    assert result.app_clusters == [["app000"]]
    assert result.mining.selected == []


def test_stages_rerun_from_disk(five_apps, tmp_path):
    out = tmp_path / "out"
    full = run(cfg_for(five_apps, out))
    before = {n: (out / n).read_bytes() for n in REPORTS}
    for stage in ("cluster", "mine"):
        Workspace(cfg_for(five_apps, out)).run_stage(stage)
    assert {n: (out / n).read_bytes() for n in REPORTS} == before
    assert full.app_clusters == parse_app_clusters((out / "app_clusters.tsv").read_text())


def test_missing_upstream_names_stage(tmp_path):
    ws = Workspace(RunConfig(out=tmp_path / "out"))
    with pytest.raises(PipelineError, match="run the 'candidates' stage first"):
        ws.run_stage("cluster")
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["stages"]["cluster"]["status"] == "incomplete"


def test_bad_input_names_file(tmp_path):
    (tmp_path / "corpus").mkdir()
    (tmp_path / "corpus" / "broken.ir").write_text("APP x\nCLASS c\nI sget;;;\n")
    with pytest.raises(PipelineError) as err:
        run(RunConfig(out=tmp_path / "out", corpus=tmp_path / "corpus"))
    assert err.value.stage == "ingest" and err.value.input_id == "broken.ir"
    assert "line 3" in str(err.value)


def test_upstream_directory_is_searched(five_apps, tmp_path):
    run(cfg_for(five_apps, tmp_path / "up"))
    ws = Workspace(RunConfig(out=tmp_path / "down", theta=0.9), [tmp_path / "up"])
    for stage in ("cluster", "mine"):
        ws.run_stage(stage)
    assert (tmp_path / "down" / "app_clusters.tsv").read_text() == (tmp_path / "up" / "app_clusters.tsv").read_text()


def test_config_file_parsing():
    values = parse_config_file("theta = 0.9  # stricter\nmin-k=50\n\nopt=minhash\n")
    assert values == {"theta": 0.9, "min_k": 50, "opt": "minhash"}
    with pytest.raises(ValueError, match="line 1"):
        parse_config_file("nonsense=1\n")
    with pytest.raises(ValueError, match="line 2"):
        parse_config_file("theta=0.5\nbits=many\n")


def test_bad_parameters_fail_early(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(out=tmp_path, theta=2.0)
    with pytest.raises(ValueError):
        RunConfig(out=tmp_path, opt="turbo")


def test_app_cluster_format():
    groups = [["a", "b"], ["c"]]
    assert format_app_clusters(groups) == "0\ta\n0\tb\n1\tc\n"
    assert parse_app_clusters(format_app_clusters(groups)) == groups

"""Stage-by-stage orchestration with persisted artifacts and a run manifest.

Stages: ingest -> fingerprint -> strip -> candidates -> cluster -> mine ->
reconstruct. Each stage keeps its outputs in memory for the next one and
writes them under the output directory; a stage started on its own loads
whatever it needs from disk and names the missing stage if it cannot.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .clustering import ClusteringConfig, PayloadClusterSet, hac
from .corpus_ir import AppIR, extract_ngram_features, parse_app_ir, serialize_app_ir
from .fingerprint import DEFAULT_BITS, BitFingerprint, FeatureBitMap, FingerprintConfig, build_fingerprint
from .libstrip import LibraryProfile, build_library_profiles, strip_libraries
from .mining import MiningConfig, MiningResult, group_apps, mine
from .payload_extract import CandidatePayload, extract_candidates
from .reconstruct import reconstruct_app
from .scale import MinHashConfig, PrototypeConfig, minhash_signatures, prototype_cluster
from . import store

log = logging.getLogger(__name__)

OPT_LEVELS = ("none", "minhash", "prototype")
STAGES = ("ingest", "fingerprint", "strip", "candidates", "cluster", "mine", "reconstruct")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, input_id: str | None = None):
        where = f"{stage}" + (f" [{input_id}]" if input_id else "")
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.input_id = input_id


@dataclass
class RunConfig:
    out: Path
    corpus: Path | None = None
    libs: Path | None = None
    ngram: int = 2
    bits: int = DEFAULT_BITS
    theta: float = 0.85
    linkage: str = "single"
    min_k: int = 70
    min_l: int = 2
    min_bits: int = 1
    refine_step: float = 0.05
    opt: str = "none"
    minhash_k: int = 256
    group_size: int = 150
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        self.out = Path(self.out)
        self.corpus = Path(self.corpus) if self.corpus is not None else None
        self.libs = Path(self.libs) if self.libs is not None else None
        if self.opt not in OPT_LEVELS:
            raise ValueError(f"opt must be one of {OPT_LEVELS}, got {self.opt!r}")
        # validate eagerly so bad parameters fail before any stage runs
        self.fingerprint_config()
        self.clustering_config()
        self.mining_config()

    def fingerprint_config(self) -> FingerprintConfig:
        return FingerprintConfig(self.ngram, self.bits)

    def clustering_config(self) -> ClusteringConfig:
        return ClusteringConfig(self.theta, self.linkage)

    def mining_config(self) -> MiningConfig:
        return MiningConfig(self.min_k, self.min_l, self.refine_step)

    def minhash_config(self) -> MinHashConfig:
        return MinHashConfig(self.minhash_k, self.seed)

    def prototype_config(self) -> PrototypeConfig:
        return PrototypeConfig(self.group_size, None, self.seed)

    def params(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value) if isinstance(value, Path) else value
        return out


PARAM_TYPES: dict[str, Callable[[str], Any]] = {
    "corpus": Path,
    "libs": Path,
    "out": Path,
    "ngram": int,
    "bits": int,
    "theta": float,
    "linkage": str,
    "min_k": int,
    "min_l": int,
    "min_bits": int,
    "refine_step": float,
    "opt": str,
    "minhash_k": int,
    "group_size": int,
    "seed": int,
    "jobs": int,
}


def parse_config_file(text: str) -> dict[str, Any]:
    """Flat ``key = value`` lines; '#' starts a comment; dashes in keys are allowed."""
    out: dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in PARAM_TYPES:
            raise ValueError(f"config line {line_no}: unknown or malformed entry {line!r}")
        try:
            out[key] = PARAM_TYPES[key](value.strip())
        except ValueError:
            raise ValueError(f"config line {line_no}: bad value for {key}") from None
    return out


def _fingerprint_one(app: AppIR, cfg: FingerprintConfig) -> tuple[BitFingerprint, FeatureBitMap]:
    return build_fingerprint(extract_ngram_features(app, cfg.n), cfg)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cluster_candidates(candidates: Sequence[CandidatePayload], cfg: RunConfig) -> PayloadClusterSet:
    if not candidates:
        return PayloadClusterSet([])
    ccfg = cfg.clustering_config()
    members = [(c.payload_id, c.fingerprint) for c in candidates]
    if cfg.opt == "minhash":
        sigs = minhash_signatures([c.fingerprint for c in candidates], cfg.minhash_config())
        return hac([(c.payload_id, s) for c, s in zip(candidates, sigs)], ccfg)
    if cfg.opt == "prototype":
        return prototype_cluster(members, cfg.prototype_config(), ccfg)
    return hac(members, ccfg)


def format_app_clusters(groups: Sequence[Sequence[str]]) -> str:
    return "".join(f"{i}\t{a}\n" for i, g in enumerate(groups) for a in g)


def parse_app_clusters(text: str) -> list[list[str]]:
    return PayloadClusterSet.from_tsv(text).clusters


class Workspace:
    """Holds stage results in memory and mirrors them to ``cfg.out``.

    ``upstream`` directories are searched (after ``cfg.out``) for artifacts of
    earlier stages, which lets one candidate set be clustered into several
    output directories.
    """

    def __init__(self, cfg: RunConfig, upstream: Sequence[Path] = ()):
        self.cfg = cfg
        self.out = cfg.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.search = [self.out, *map(Path, upstream)]
        self.apps: dict[str, AppIR] | None = None
        self.fingerprints: dict[str, BitFingerprint] | None = None
        self.bitmaps: dict[str, FeatureBitMap] | None = None
        self.libraries: list[LibraryProfile] | None = None
        self.stripped: dict[str, BitFingerprint] | None = None
        self.candidates: list[CandidatePayload] | None = None
        self.clusters: PayloadClusterSet | None = None
        self.mining: MiningResult | None = None
        self.manifest = self._load_manifest()

    # manifest ------------------------------------------------------------
    def _load_manifest(self) -> dict[str, Any]:
        path = self.out / "manifest.json"
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            data = {"stages": {}, "inputs": {}}
        data["params"] = self.cfg.params()
        data["seeds"] = {"minhash": self.cfg.seed, "prototype_shuffle": self.cfg.seed}
        return data

    def _save_manifest(self) -> None:
        path = self.out / "manifest.json"
        path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def find(self, name: str, stage: str, needed_by: str) -> Path:
        for root in self.search:
            if (root / name).exists():
                return root / name
        raise PipelineError(needed_by, f"missing {name}; run the '{stage}' stage first")

    def run_stage(self, stage: str) -> None:
        entry = {"status": "incomplete"}
        self.manifest["stages"][stage] = entry
        self._save_manifest()
        start = time.perf_counter()
        try:
            getattr(self, f"stage_{stage}")()
        except PipelineError as exc:
            entry["error"] = str(exc)
            self._save_manifest()
            raise
        except Exception as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            self._save_manifest()
            raise PipelineError(stage, str(exc)) from exc
        entry["status"] = "complete"
        entry["seconds"] = round(time.perf_counter() - start, 3)
        self._save_manifest()
        log.info("stage %s done in %.2fs", stage, entry["seconds"])

    # loaders ---------------------------------------------------------------
    def need_apps(self, by: str) -> dict[str, AppIR]:
        if self.apps is None:
            index = self.find("apps.txt", "ingest", by)
            ids = index.read_text(encoding="utf-8").split()
            self.apps = {
                a: parse_app_ir((index.parent / "ir" / f"{a}.ir").read_text(encoding="utf-8")) for a in ids
            }
        return self.apps

    def need_fingerprints(self, by: str) -> tuple[dict[str, BitFingerprint], dict[str, FeatureBitMap]]:
        if self.fingerprints is None:
            path = self.find("fingerprints.fpv.gz", "fingerprint", by)
            self.fingerprints = dict(store.read_fingerprints(path))
            self.bitmaps = {
                a: store.parse_bitmap_sidecar((path.parent / "bitmaps" / f"{a}.map").read_text(encoding="utf-8"))
                for a in self.fingerprints
            }
        assert self.bitmaps is not None
        return self.fingerprints, self.bitmaps

    def need_stripped(self, by: str) -> dict[str, BitFingerprint]:
        if self.stripped is None:
            self.stripped = dict(store.read_fingerprints(self.find("stripped.fpv.gz", "strip", by)))
        return self.stripped

    def need_candidates(self, by: str) -> list[CandidatePayload]:
        if self.candidates is None:
            self.candidates = store.read_candidates(self.find("candidates.cpv.gz", "candidates", by))
        return self.candidates

    def need_clusters(self, by: str) -> PayloadClusterSet:
        if self.clusters is None:
            text = self.find("clusters.tsv", "cluster", by).read_text(encoding="utf-8")
            self.clusters = PayloadClusterSet.from_tsv(text)
        return self.clusters

    def need_mining(self, by: str) -> MiningResult:
        if self.mining is None:
            self.mining = MiningResult.from_json(self.find("mining.json", "mine", by).read_text(encoding="utf-8"))
        return self.mining

    # stages ----------------------------------------------------------------
    def stage_ingest(self) -> None:
        if self.cfg.corpus is None:
            raise PipelineError("ingest", "no corpus directory given (--corpus)")
        files = sorted(self.cfg.corpus.glob("*.ir"))
        apps: dict[str, AppIR] = {}
        inputs = {}
        for path in files:
            try:
                app = parse_app_ir(path.read_text(encoding="utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise PipelineError("ingest", str(exc), path.name) from exc
            if app.is_library:
                raise PipelineError("ingest", "LIBRARY document in the app corpus", path.name)
            if app.app_id in apps:
                raise PipelineError("ingest", f"duplicate app id {app.app_id}", path.name)
            apps[app.app_id] = app
            inputs[f"corpus/{path.name}"] = _sha256(path)
        ir_dir = self.out / "ir"
        ir_dir.mkdir(exist_ok=True)
        for app_id in sorted(apps):
            (ir_dir / f"{app_id}.ir").write_text(serialize_app_ir(apps[app_id]), encoding="utf-8")
        (self.out / "apps.txt").write_text("".join(f"{a}\n" for a in sorted(apps)), encoding="utf-8")
        self.apps = {a: apps[a] for a in sorted(apps)}
        self.manifest["inputs"].update(inputs)

    def stage_fingerprint(self) -> None:
        apps = self.need_apps("fingerprint")
        cfg = self.cfg.fingerprint_config()
        ids = list(apps)
        if self.cfg.jobs > 1 and len(ids) > 1:
            with ProcessPoolExecutor(max_workers=self.cfg.jobs) as pool:
                results = list(pool.map(_fingerprint_one, [apps[a] for a in ids], [cfg] * len(ids)))
        else:
            results = []
            for a in ids:
                try:
                    results.append(_fingerprint_one(apps[a], cfg))
                except Exception as exc:
                    raise PipelineError("fingerprint", str(exc), a) from exc
        self.fingerprints = {a: r[0] for a, r in zip(ids, results)}
        self.bitmaps = {a: r[1] for a, r in zip(ids, results)}
        store.write_fingerprints(self.out / "fingerprints.fpv.gz", list(self.fingerprints.items()))
        bm_dir = self.out / "bitmaps"
        bm_dir.mkdir(exist_ok=True)
        for a, bitmap in self.bitmaps.items():
            (bm_dir / f"{a}.map").write_text(store.format_bitmap_sidecar(bitmap), encoding="utf-8")

    def stage_strip(self) -> None:
        apps = self.need_apps("strip")
        fps, _ = self.need_fingerprints("strip")
        cfg = self.cfg.fingerprint_config()
        docs = []
        if self.cfg.libs is not None:
            for path in sorted(self.cfg.libs.glob("*.ir")):
                try:
                    doc = parse_app_ir(path.read_text(encoding="utf-8"))
                except (ValueError, UnicodeDecodeError) as exc:
                    raise PipelineError("strip", str(exc), path.name) from exc
                if not doc.is_library:
                    raise PipelineError("strip", "expected a LIBRARY document", path.name)
                docs.append(doc)
                self.manifest["inputs"][f"libs/{path.name}"] = _sha256(path)
        self.libraries = build_library_profiles(docs, cfg)
        store.write_library_profiles(self.out / "libs.lib.gz", self.libraries)
        stripped = {}
        report = []
        for a, app in apps.items():
            stripped[a], applied = strip_libraries(fps[a], app, self.libraries)
            report.append(f"{a}\t{','.join(applied)}\n")
        self.stripped = stripped
        store.write_fingerprints(self.out / "stripped.fpv.gz", list(stripped.items()))
        (self.out / "strip.tsv").write_text("".join(report), encoding="utf-8")

    def stage_candidates(self) -> None:
        stripped = self.need_stripped("candidates")
        self.candidates = extract_candidates(stripped, self.cfg.min_bits) if len(stripped) >= 2 else []
        store.write_candidates(self.out / "candidates.cpv.gz", self.candidates)

    def stage_cluster(self) -> None:
        candidates = self.need_candidates("cluster")
        self.clusters = cluster_candidates(candidates, self.cfg)
        if self.cfg.opt == "minhash" and candidates:
            mcfg = self.cfg.minhash_config()
            sigs = minhash_signatures([c.fingerprint for c in candidates], mcfg)
            store.write_signatures(
                self.out / "signatures.mhs", mcfg, [(c.payload_id, s) for c, s in zip(candidates, sigs)]
            )
        (self.out / "clusters.tsv").write_text(self.clusters.to_tsv(), encoding="utf-8")

    def stage_mine(self) -> None:
        candidates = self.need_candidates("mine")
        clusters = self.need_clusters("mine")
        apps = self.need_apps("mine")
        self.mining = mine(
            clusters, candidates, self.cfg.mining_config(), self.cfg.clustering_config(), apps=apps
        )
        (self.out / "mining.json").write_text(self.mining.to_json(), encoding="utf-8")
        (self.out / "mining.txt").write_text(self.mining.to_text(), encoding="utf-8")
        (self.out / "app_clusters.tsv").write_text(format_app_clusters(group_apps(self.mining)), encoding="utf-8")

    def stage_reconstruct(self) -> None:
        result = self.need_mining("reconstruct")
        apps = self.need_apps("reconstruct")
        _, bitmaps = self.need_fingerprints("reconstruct")
        out_dir = self.out / "reconstruct"
        out_dir.mkdir(exist_ok=True)
        for old in out_dir.glob("cluster_*.txt"):
            old.unlink()
        for sel in result.selected:
            parts = []
            for app_id in sel.apps:
                try:
                    rec = reconstruct_app(sel.fingerprint.indices.tolist(), bitmaps[app_id], apps[app_id], self.cfg.ngram)
                except (KeyError, ValueError) as exc:
                    raise PipelineError("reconstruct", str(exc), app_id) from exc
                parts.append(f"# app {app_id}\n{rec.to_text()}")
            (out_dir / f"cluster_{sel.rank:03d}.txt").write_text("\n".join(parts), encoding="utf-8")


@dataclass
class RunResult:
    workspace: Workspace
    app_clusters: list[list[str]]
    mining: MiningResult


def run(cfg: RunConfig, stages: Sequence[str] = STAGES) -> RunResult:
    ws = Workspace(cfg)
    for stage in stages:
        ws.run_stage(stage)
    mining = ws.need_mining("run")
    return RunResult(ws, group_apps(mining), mining)

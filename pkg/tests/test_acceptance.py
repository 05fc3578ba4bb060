"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints a single ``[PASS]``/``[FAIL]`` line and then asserts.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from payloadmine.clustering import ClusteringConfig, PayloadClusterSet, hac
from payloadmine.corpus_ir import extract_ngram_features, method_ngrams, parse_app_ir
from payloadmine.evalgen import (
    SynthSpec,
    clustering_precision_recall,
    collision_stats,
    evaluate_removal,
    generate_corpus,
)
from payloadmine.fingerprint import BitFingerprint, FingerprintConfig, build_fingerprint, containment, jaccard
from payloadmine.libstrip import build_library_profiles, strip_libraries
from payloadmine.mining import MiningConfig, group_apps, mine
from payloadmine.payload_extract import extract_candidates
from payloadmine.pipeline import RunConfig, run
from payloadmine.reconstruct import reconstruct_app
from payloadmine.scale import MinHashConfig, PrototypeConfig, minhash_signature, prototype_cluster, signature_similarity

from conftest import ACCEPTANCE_LINES

WIDE = FingerprintConfig(n=2, bits=1 << 31)


def report(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def best_time(fn, repeats: int = 5):
    result, best = None, math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return result, best


def stripped_fingerprints(corpus, cfg: FingerprintConfig, with_libs: bool = True):
    apps = {a: parse_app_ir(t) for a, t in corpus.apps.items()}
    libs = build_library_profiles([parse_app_ir(t) for t in corpus.libraries.values()], cfg) if with_libs else []
    fps, bitmaps, stripped = {}, {}, {}
    for a, app in apps.items():
        fps[a], bitmaps[a] = build_fingerprint(extract_ngram_features(app, cfg.n), cfg)
        stripped[a], _ = strip_libraries(fps[a], app, libs)
    return apps, bitmaps, stripped


def all_contents(corpus, n: int = 2) -> list[bytes]:
    docs = [parse_app_ir(t) for t in [*corpus.apps.values(), *corpus.libraries.values()]]
    return sorted({f.content for d in docs for f in extract_ngram_features(d, n)})


@pytest.fixture(scope="module")
def default_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_default")
    corpus = generate_corpus(SynthSpec())
    corpus.write(root)
    return root, corpus


# 1 -------------------------------------------------------------------------

def test_criterion_1_end_to_end_recovery(default_corpus, tmp_path):
    root, corpus = default_corpus
    assert len(corpus.apps) == 60 and len({lib.split("-")[0] for lib in corpus.libraries}) == 5
    start = time.perf_counter()
    result = run(RunConfig(out=tmp_path / "run", corpus=root / "corpus", libs=root / "libs"))
    elapsed = time.perf_counter() - start
    p, r = clustering_precision_recall(result.app_clusters, corpus.truth.partition("version"))
    report(1, p >= 0.95 and r >= 0.95 and elapsed < 60, f"P={p:.3f} R={r:.3f} (>=0.95 each), run {elapsed:.1f}s (<60s)")


# 2 -------------------------------------------------------------------------

def test_criterion_2_payload_preserved_under_library_names():
    corpus = generate_corpus(SynthSpec(inject_under_lib_namespace=1.0))
    collisions = collision_stats(all_contents(corpus), WIDE).colliding_bits
    apps, bitmaps, stripped = stripped_fingerprints(corpus, WIDE)
    cands = extract_candidates(stripped)
    clusters = hac([(c.payload_id, c.fingerprint) for c in cands], ClusteringConfig())
    result = mine(clusters, cands, MiningConfig(), ClusteringConfig(), apps=apps)

    truth = corpus.truth
    missing = extra = expected_total = 0
    for sel in result.selected:
        # oracle: windows whose content every app of the cluster carries in its payload
        payload_windows = {}
        for a in sel.apps:
            wanted = truth.payload_methods[a]
            payload_windows[a] = [f for m in apps[a].methods if m.function_offset in wanted for f in method_ngrams(m, 2)]
        shared = set.intersection(*({f.content for f in feats} for feats in payload_windows.values()))
        for a in sel.apps:
            expected = {
                (f.location.function_offset, f.location.bytecode_offset + d)
                for f in payload_windows[a]
                if f.content in shared
                for d in range(2)
            }
            got = reconstruct_app(sel.fingerprint.indices.tolist(), bitmaps[a], apps[a], 2).instruction_locations()
            expected_total += len(expected)
            missing += len(expected - got)
            extra += sum(1 for fn, _ in got if fn not in truth.payload_methods[a])
    ok = collisions == 0 and result.selected and missing == 0 and extra == 0
    report(
        2,
        bool(ok),
        f"{len(result.selected)} clusters, {expected_total - missing}/{expected_total} payload lines recovered, "
        f"{extra} benign/library lines, {collisions} colliding bits",
    )


# 3 -------------------------------------------------------------------------

def test_criterion_3_fingerprint_math_matches_set_oracle():
    rng = np.random.default_rng(3)
    cfg = FingerprintConfig()
    checked = mismatches = 0
    for _ in range(500):
        pool = [rng.bytes(int(rng.integers(4, 24))) for _ in range(int(rng.integers(2, 40)))]
        a = {c for c in pool if rng.random() < 0.6} or {pool[0]}
        b = {c for c in pool if rng.random() < 0.6} or {pool[-1]}
        if collision_stats(sorted(a | b), cfg).colliding_bits:
            continue
        checked += 1
        fa = build_fingerprint([_feature(c) for c in a], cfg)[0]
        fb = build_fingerprint([_feature(c) for c in b], cfg)[0]
        if jaccard(fa, fb) != len(a & b) / len(a | b) or containment(fa, fb) != len(a & b) / len(a):
            mismatches += 1
    report(3, mismatches == 0 and checked >= 450, f"{checked}/500 collision-free sets, {mismatches} mismatches")


def _feature(content: bytes):
    from payloadmine.corpus_ir import FeatureTuple, NGramFeature

    return NGramFeature(content, FeatureTuple(0, 0))


# 4 -------------------------------------------------------------------------

def test_criterion_4_minhash_accuracy():
    rng = np.random.default_rng(4)
    cfg = MinHashConfig(k=256, seed=0)
    randoms = cfg.random_numbers()
    width = 8_388_608
    errors = []
    while len(errors) < 1000:
        size = int(rng.integers(50, 600))
        target = rng.uniform(0.1, 0.9)
        # |A∩B| = s, |A∪B| = size; split the remainder between A-only and B-only
        shared = int(round(target * size))
        bits = rng.choice(width, size=size, replace=False)
        rest = bits[shared:]
        cut = int(rng.integers(0, rest.size + 1))
        fa = BitFingerprint.from_bits(np.concatenate([bits[:shared], rest[:cut]]), width)
        fb = BitFingerprint.from_bits(np.concatenate([bits[:shared], rest[cut:]]), width)
        if fa.popcount() == 0 or fb.popcount() == 0:
            continue
        true = jaccard(fa, fb)
        if not 0.1 <= true <= 0.9:
            continue
        est = signature_similarity(minhash_signature(fa, cfg, randoms), minhash_signature(fb, cfg, randoms))
        errors.append(abs(est - true))
    mean, worst = float(np.mean(errors)), float(np.max(errors))
    report(4, mean <= 0.04 and worst <= 0.15, f"{len(errors)} pairs, mean |err|={mean:.4f} (<=0.04), max={worst:.4f} (<=0.15)")


# 5 -------------------------------------------------------------------------

def test_criterion_5_minhash_clustering_agrees(tmp_path):
    spec = SynthSpec(seed=5, families=[("fam0", 2, 9), ("fam1", 2, 8), ("fam2", 2, 8)])
    corpus = generate_corpus(spec)
    corpus.write(tmp_path / "data")
    assert len(corpus.apps) == 50
    base = dict(corpus=tmp_path / "data" / "corpus", libs=tmp_path / "data" / "libs")
    exact = run(RunConfig(out=tmp_path / "exact", **base))
    approx = run(RunConfig(out=tmp_path / "mh", opt="minhash", **base))
    read = lambda d: PayloadClusterSet.from_tsv((d / "clusters.tsv").read_text()).clusters  # noqa: E731
    pp, pr = clustering_precision_recall(read(tmp_path / "mh"), read(tmp_path / "exact"))
    ap, ar = clustering_precision_recall(approx.app_clusters, exact.app_clusters)
    ok = min(pp, pr, ap, ar) >= 0.98
    report(5, ok, f"payload clusters P={pp:.3f} R={pr:.3f}; app clusters P={ap:.3f} R={ar:.3f} (>=0.98 each)")


# 6 -------------------------------------------------------------------------

def _candidate_sample(spec: SynthSpec, size: int, seed: int):
    _, _, stripped = stripped_fingerprints(generate_corpus(spec), FingerprintConfig())
    cands = extract_candidates(stripped)
    assert len(cands) >= size
    pick = np.sort(np.random.default_rng(seed).choice(len(cands), size=size, replace=False))
    return [(cands[i].payload_id, cands[i].fingerprint) for i in pick]


def test_criterion_6_prototype_clustering():
    ccfg = ClusteringConfig()
    small = _candidate_sample(SynthSpec(seed=6, families=[("a", 2, 8), ("b", 2, 8), ("c", 2, 5), ("d", 1, 6)]), 300, 6)
    exact = hac(small, ccfg)
    approx = prototype_cluster(small, PrototypeConfig(group_size=150, seed=6), ccfg)
    p, r = clustering_precision_recall(approx.clusters, exact.clusters)

    fams = [(f"f{i}", 2, 10) for i in range(10)] + [("g", 1, 15)]
    large = _candidate_sample(SynthSpec(seed=6, families=fams, benign_base_pool=215), 2000, 6)
    _, t_exact = best_time(lambda: hac(large, ccfg))
    _, t_proto = best_time(lambda: prototype_cluster(large, PrototypeConfig(group_size=150, seed=6), ccfg))
    speedup = t_exact / t_proto
    ok = p >= 0.93 and r >= 0.93 and speedup >= 3.0
    report(6, ok, f"300 candidates P={p:.3f} R={r:.3f} (>=0.93 each); 2000 candidates speedup {speedup:.2f}x (>=3x)")


# 7 -------------------------------------------------------------------------

def test_criterion_7_candidate_count_law():
    rng = np.random.default_rng(7)
    counts = {}
    for n in (2, 5, 20):
        stripped = {
            f"app{i:02d}": BitFingerprint.from_bits({0, *rng.integers(1, 1 << 20, 30).tolist()}, 1 << 20)
            for i in range(n)
        }
        counts[n] = len(extract_candidates(stripped))
    ok = all(counts[n] == n * (n - 1) // 2 for n in counts) and counts[5] == 10
    report(7, ok, ", ".join(f"n={n}: {c}" for n, c in counts.items()))


# 8 -------------------------------------------------------------------------

def test_criterion_8_collision_occupancy():
    n, m = 4_000_000, 8_388_608
    raw = np.random.default_rng(8).bytes(16 * n)
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(n, 16)
    distinct = np.unique(rows.view(np.dtype((np.void, 16))).ravel()).size == n
    stats = collision_stats([raw[i : i + 16] for i in range(0, len(raw), 16)], FingerprintConfig(bits=m))
    model = m * (1 - math.exp(-n / m))
    rel = abs(stats.occupied_bits - model) / model
    ok = distinct and abs(stats.unique_features_per_bit - 0.48) <= 0.005 and rel <= 0.02
    report(
        8,
        ok,
        f"features/bit={stats.unique_features_per_bit:.4f} (~0.48), occupied={stats.occupied_bits} "
        f"vs model {model:.0f} ({100 * rel:.2f}% off, <=2%)",
    )


# 9 -------------------------------------------------------------------------

def test_criterion_9_library_removal():
    corpus = generate_corpus(SynthSpec(seed=9, families=[("f", 2, 10), ("g", 2, 10)], lib_use_prob=1.0))
    collisions = collision_stats(all_contents(corpus), WIDE).colliding_bits
    apps = [parse_app_ir(t) for t in corpus.apps.values()]
    docs = {name: parse_app_ir(t) for name, t in corpus.libraries.items()}
    full = evaluate_removal(apps, build_library_profiles(list(docs.values()), WIDE), corpus.truth, WIDE)
    # drop the version of lib0 that most apps use
    users = [v["lib0"] for v in corpus.truth.library_versions.values()]
    dropped = f"lib0-v{max(set(users), key=users.count)}"
    partial_docs = [d for name, d in docs.items() if name != dropped]
    partial = evaluate_removal(apps, build_library_profiles(partial_docs, WIDE), corpus.truth, WIDE)
    ok = (
        collisions == 0
        and full.median_precision == 1.0
        and full.median_recall == 1.0
        and partial.median_precision == 1.0
        and partial.median_recall < full.median_recall
    )
    report(
        9,
        ok,
        f"full profile P={full.median_precision:.3f} R={full.median_recall:.3f}; without {dropped} "
        f"P={partial.median_precision:.3f} R={partial.median_recall:.3f}; {collisions} colliding bits",
    )


# 10 ------------------------------------------------------------------------

def test_criterion_10_mining_invariants(default_corpus, tmp_path):
    root, _ = default_corpus
    outs = [tmp_path / "a", tmp_path / "b"]
    results = [run(RunConfig(out=o, corpus=root / "corpus", libs=root / "libs", seed=11)) for o in outs]
    mining = results[0].mining
    seen: set[str] = set()
    disjoint = True
    for sel in mining.selected:
        disjoint &= not (seen & set(sel.apps))
        seen |= set(sel.apps)
    thresholds = all(s.stats.k >= 70 and s.stats.l >= 2 for s in mining.selected)
    names = ["mining.json", "mining.txt", "app_clusters.tsv", "clusters.tsv", "candidates.cpv.gz"]
    names += sorted(p.relative_to(outs[0]).as_posix() for p in (outs[0] / "reconstruct").iterdir())
    identical = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)

    five = generate_corpus(SynthSpec(families=[("shared", 1, 3), ("solo4", 1, 1), ("solo5", 1, 1)], libraries=3))
    five.write(tmp_path / "five")
    trace = run(RunConfig(out=tmp_path / "five_out", corpus=tmp_path / "five" / "corpus", libs=tmp_path / "five" / "libs"))
    fig = trace.app_clusters == [["app000", "app001", "app002"], ["app003"], ["app004"]]

    ok = disjoint and thresholds and identical and fig
    report(
        10,
        ok,
        f"disjoint={disjoint} k>=70,l>=2={thresholds} byte-identical={identical} five-app trace={trace.app_clusters}",
    )

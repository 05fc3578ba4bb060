"""Synthetic repackaged-malware corpora with ground truth, plus evaluation metrics.

Each generated app is one benign base, a random subset of libraries (one
version each) and one payload version of one family. Every generated method
alternates generic opcodes with instructions carrying a corpus-unique name,
so any n-gram with n >= 2 occurs in exactly one code pool (benign base,
library version, or payload). That makes exact oracles possible.
"""
from __future__ import annotations

import dataclasses
import random
import statistics
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus_ir import (
    AppIR,
    InstructionRecord,
    MethodIR,
    extract_ngram_features,
    method_ngrams,
    serialize_app_ir,
)
from .fingerprint import BitFingerprint, FingerprintConfig, and_not, bit_indices, build_fingerprint
from .libstrip import LibraryProfile, removal_metrics, strip_libraries

LIBRARY_NAMESPACES = (
    "com.google.ads",
    "twitter4j",
    "com.umeng.analytics",
    "com.facebook.android",
    "org.apache.commons",
    "com.flurry.android",
    "com.admob.android",
    "cn.domob.android",
    "com.millennialmedia",
    "com.inmobi.androidsdk",
)
GENERIC_OPCODES = (
    "move-result",
    "move-result-object",
    "return-void",
    "return",
    "if-eqz",
    "if-nez",
    "goto",
    "add-int/lit8",
    "iget-object",
    "iput",
    "aget-byte",
    "check-cast",
    "sget",
    "array-length",
)
TYPE_SIGS = ("Z", "B", "I", "J", "[B", "Ljava/lang/String;", "Landroid/content/Context;")


@dataclass
class SynthSpec:
    seed: int = 0
    # (family_id, payload versions, apps per version)
    families: list[tuple[str, int, int]] = field(
        default_factory=lambda: [("fam0", 2, 10), ("fam1", 2, 10), ("fam2", 2, 10)]
    )
    libraries: int = 5
    lib_versions: int = 2
    lib_methods: tuple[int, int] = (15, 30)
    lib_drift: float = 0.2  # fraction of a library's methods replaced per version
    lib_use_prob: float = 0.6
    benign_base_pool: int = 80
    benign_methods: tuple[int, int] = (15, 40)
    method_len: tuple[int, int] = (4, 20)
    payload_methods: int = 6
    payload_method_len: tuple[int, int] = (15, 18)
    version_share: tuple[float, float] = (0.3, 0.7)
    inject_under_lib_namespace: float = 0.2

    def validate(self) -> None:
        if not self.families:
            raise ValueError("spec needs at least one family")
        for fam, versions, apps in self.families:
            if versions < 1 or apps < 1:
                raise ValueError(f"family {fam}: counts must be >= 1")
        if len({f[0] for f in self.families}) != len(self.families):
            raise ValueError("family ids must be unique")
        for name in ("lib_methods", "benign_methods", "method_len", "payload_method_len"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name}: bad range {lo}..{hi}")
        for name in ("method_len", "payload_method_len"):
            if getattr(self, name)[0] < 2:
                raise ValueError(f"{name}: methods need at least 2 instructions")
        lo, hi = self.version_share
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("version_share must be a sub-range of [0, 1]")
        for name in ("lib_drift", "lib_use_prob", "inject_under_lib_namespace"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lib_versions < 1 or self.benign_base_pool < 1 or self.payload_methods < 1:
            raise ValueError("counts must be >= 1")
        if self.libraries < 0:
            raise ValueError("libraries must be >= 0")

    def to_config(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "families":
                text = ",".join(f"{fam}:{v}:{a}" for fam, v, a in value)
            elif isinstance(value, tuple):
                text = ",".join(str(x) for x in value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "SynthSpec":
        spec = cls()
        for line_no, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not hasattr(spec, key):
                raise ValueError(f"spec line {line_no}: unknown or malformed entry {line!r}")
            current = getattr(spec, key)
            try:
                if key == "families":
                    value = [(p[0], int(p[1]), int(p[2])) for p in (x.split(":") for x in raw.split(","))]
                elif isinstance(current, tuple):
                    value = tuple(type(current[0])(x) for x in raw.split(","))
                else:
                    value = type(current)(raw)
            except (ValueError, IndexError):
                raise ValueError(f"spec line {line_no}: cannot parse {key}={raw!r}") from None
            setattr(spec, key, value)
        spec.validate()
        return spec


@dataclass
class GroundTruth:
    labels: dict[str, tuple[str, str]] = field(default_factory=dict)
    library_methods: dict[str, set[int]] = field(default_factory=dict)
    payload_methods: dict[str, set[int]] = field(default_factory=dict)
    library_versions: dict[str, dict[str, int]] = field(default_factory=dict)

    def partition(self, level: str = "version") -> list[list[str]]:
        """Reference app clusters per payload version (default) or per family."""
        groups: dict[tuple[str, ...], list[str]] = {}
        for app in sorted(self.labels):
            fam, ver = self.labels[app]
            groups.setdefault((fam, ver) if level == "version" else (fam,), []).append(app)
        return [groups[k] for k in sorted(groups)]

    def true_library_fingerprint(self, app: AppIR, cfg: FingerprintConfig) -> BitFingerprint:
        wanted = self.library_methods.get(app.app_id, set())
        feats = [f for m in app.methods if m.function_offset in wanted for f in method_ngrams(m, cfg.n)]
        return build_fingerprint(feats, cfg)[0]

    def payload_ranges(self, app: AppIR) -> dict[int, tuple[int, int]]:
        wanted = self.payload_methods.get(app.app_id, set())
        return {m.function_offset: (0, len(m.instructions)) for m in app.methods if m.function_offset in wanted}

    def to_tsv(self) -> str:
        return "".join(f"{app}\t{fam}\t{ver}\n" for app, (fam, ver) in sorted(self.labels.items()))

    @classmethod
    def from_tsv(cls, text: str) -> "GroundTruth":
        truth = cls()
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"ground truth line {line_no}: expected app_id<TAB>family_id<TAB>version_id")
            truth.labels[parts[0]] = (parts[1], parts[2])
        return truth


@dataclass
class SyntheticCorpus:
    apps: dict[str, str]  # app_id -> IR text
    libraries: dict[str, str]  # "<lib>-v<k>" -> LIBRARY IR text
    truth: GroundTruth

    def write(self, root: Path | str) -> None:
        root = Path(root)
        (root / "corpus").mkdir(parents=True, exist_ok=True)
        (root / "libs").mkdir(parents=True, exist_ok=True)
        for app_id, text in self.apps.items():
            (root / "corpus" / f"{app_id}.ir").write_text(text, encoding="utf-8")
        for name, text in self.libraries.items():
            (root / "libs" / f"{name}.ir").write_text(text, encoding="utf-8")
        (root / "truth.tsv").write_text(self.truth.to_tsv(), encoding="utf-8")


class _Names:
    """Corpus-unique identifiers drawn from a seeded RNG."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def __call__(self, length: int = 8) -> str:
        while True:
            name = "".join(self.rng.choices(string.ascii_lowercase, k=length))
            if name not in self.used:
                self.used.add(name)
                return name


@dataclass
class _Method:
    name: str
    descriptor: str
    body: list[InstructionRecord]


@dataclass
class _Class:
    path: str
    methods: list[_Method]


def _unique_instruction(rng: random.Random, names: _Names) -> InstructionRecord:
    kind = rng.randrange(3)
    if kind == 0:
        sig = f"{names()}({rng.choice(TYPE_SIGS)},{rng.choice(TYPE_SIGS)}){rng.choice(TYPE_SIGS)}"
        return InstructionRecord(rng.choice(("invoke-virtual", "invoke-static", "invoke-direct")), "", "", sig)
    if kind == 1:
        literal = f"{names(6)} {names(5)}"
        if rng.random() < 0.1:
            literal += ";|%"  # exercise escaping
        return InstructionRecord("const-string", "", literal, "")
    return InstructionRecord("new-instance", f"L{names()}/{names(6).capitalize()};", "", "")


def _make_method(rng: random.Random, names: _Names, length: tuple[int, int]) -> _Method:
    size = rng.randint(*length)
    body = []
    offset = rng.randrange(2)
    for j in range(size):
        if (j + offset) % 2 == 0:
            body.append(_unique_instruction(rng, names))
        else:
            body.append(InstructionRecord(rng.choice(GENERIC_OPCODES), rng.choice(("",) + TYPE_SIGS)))
    return _Method(names(), f"({rng.choice(TYPE_SIGS)}){rng.choice(('V',) + TYPE_SIGS)}", body)


def _pack_classes(rng: random.Random, names: _Names, prefix: str, methods: list[_Method]) -> list[_Class]:
    classes = []
    i = 0
    while i < len(methods):
        take = rng.randint(2, 5)
        classes.append(_Class(f"{prefix}.{names(6).capitalize()}", methods[i : i + take]))
        i += take
    return classes


def _namespace(names: _Names) -> str:
    return f"com.{names(5)}.{names(6)}"


def generate_corpus(spec: SynthSpec) -> SyntheticCorpus:
    spec.validate()
    rng = random.Random(spec.seed)
    names = _Names(rng)

    # libraries: a base method set, each version replaces a drift fraction
    lib_prefixes = [
        LIBRARY_NAMESPACES[i] if i < len(LIBRARY_NAMESPACES) else f"org.lib{i}.{names(5)}"
        for i in range(spec.libraries)
    ]
    lib_versions: list[list[list[_Class]]] = []
    library_docs: dict[str, str] = {}
    for li, prefix in enumerate(lib_prefixes):
        base = [_make_method(rng, names, spec.method_len) for _ in range(rng.randint(*spec.lib_methods))]
        versions = []
        for v in range(spec.lib_versions):
            methods = list(base)
            if v > 0:
                for pos in rng.sample(range(len(methods)), round(spec.lib_drift * len(methods))):
                    methods[pos] = _make_method(rng, names, spec.method_len)
            classes = _pack_classes(rng, names, prefix, methods)
            versions.append(classes)
            doc = AppIR(f"lib{li}", is_library=True, lib_prefixes=(prefix,))
            _fill(doc, classes)
            library_docs[f"lib{li}-v{v}"] = serialize_app_ir(doc)
        lib_versions.append(versions)

    bases = []
    for _ in range(spec.benign_base_pool):
        methods = [_make_method(rng, names, spec.method_len) for _ in range(rng.randint(*spec.benign_methods))]
        bases.append(_pack_classes(rng, names, _namespace(names), methods))

    payloads: list[tuple[str, str, list[_Method], str]] = []
    for fam, n_versions, _ in spec.families:
        ns = _namespace(names)
        first = [_make_method(rng, names, spec.payload_method_len) for _ in range(spec.payload_methods)]
        payloads.append((fam, "v0", first, ns))
        for v in range(1, n_versions):
            count = len(first)
            keep = min(max(round(rng.uniform(*spec.version_share) * count), 1), max(count - 1, 1))
            kept = set(rng.sample(range(count), keep))
            methods = [
                m if i in kept else _make_method(rng, names, spec.payload_method_len)
                for i, m in enumerate(first)
            ]
            payloads.append((fam, f"v{v}", methods, ns))

    base_order = list(range(len(bases)))
    rng.shuffle(base_order)
    truth = GroundTruth()
    apps: dict[str, str] = {}
    counter = 0
    for fam, n_versions, per_version in spec.families:
        for fam_id, ver, methods, ns in payloads:
            if fam_id != fam:
                continue
            for _ in range(per_version):
                app_id = f"app{counter:03d}"
                base = bases[base_order[counter % len(bases)]]
                counter += 1
                pieces: list[tuple[str, _Class]] = [("base", c) for c in base]
                used: dict[str, int] = {}
                for li in range(spec.libraries):
                    if rng.random() < spec.lib_use_prob:
                        v = rng.randrange(spec.lib_versions)
                        used[f"lib{li}"] = v
                        pieces.extend(("lib", c) for c in lib_versions[li][v])
                payload_ns = ns
                if lib_prefixes and rng.random() < spec.inject_under_lib_namespace:
                    payload_ns = f"{rng.choice(lib_prefixes)}.{names(6)}"
                pieces.extend(("payload", c) for c in _pack_classes(rng, names, payload_ns, list(methods)))
                rng.shuffle(pieces)
                doc = AppIR(app_id)
                kinds = _fill(doc, [c for _, c in pieces], [k for k, _ in pieces])
                truth.labels[app_id] = (fam, ver)
                truth.library_methods[app_id] = {i for i, k in enumerate(kinds) if k == "lib"}
                truth.payload_methods[app_id] = {i for i, k in enumerate(kinds) if k == "payload"}
                truth.library_versions[app_id] = used
                apps[app_id] = serialize_app_ir(doc)
    return SyntheticCorpus(apps, library_docs, truth)


def _fill(doc: AppIR, classes: Sequence[_Class], kinds: Sequence[str] | None = None) -> list[str]:
    """Append class methods to ``doc`` in order; returns the kind of each method."""
    method_kinds = []
    for ci, cls in enumerate(classes):
        for m in cls.methods:
            doc.methods.append(MethodIR(cls.path, m.name, m.descriptor, list(m.body), len(doc.methods)))
            method_kinds.append(kinds[ci] if kinds else "lib")
    return method_kinds


# metrics -----------------------------------------------------------------

def clustering_precision_recall(
    produced: Sequence[Iterable[str]], reference: Sequence[Iterable[str]]
) -> tuple[float, float]:
    """Precision = mean over produced clusters of their best reference overlap; recall the reverse."""
    produced_sets = [set(c) for c in produced]
    reference_sets = [set(r) for r in reference]
    universe = set().union(*produced_sets) if produced_sets else set()
    ref_universe = set().union(*reference_sets) if reference_sets else set()
    n = sum(len(c) for c in produced_sets)
    if universe != ref_universe or n != len(universe) or sum(len(r) for r in reference_sets) != n:
        raise ValueError("both partitions must cover the same apps exactly once")
    if n == 0:
        raise ValueError("cannot score empty partitions")
    precision = sum(max(len(c & r) for r in reference_sets) for c in produced_sets) / n
    recall = sum(max(len(c & r) for c in produced_sets) for r in reference_sets) / n
    return precision, recall


class CollisionStats(NamedTuple):
    unique_features_per_bit: float
    occupied_bits: int
    colliding_bits: int


def collision_stats(features: Sequence[bytes], cfg: FingerprintConfig) -> CollisionStats:
    bits = bit_indices(features, cfg)
    _, counts = np.unique(bits, return_counts=True)
    return CollisionStats(len(features) / cfg.bits, int(counts.size), int(np.count_nonzero(counts >= 2)))


@dataclass
class RemovalReport:
    per_app: dict[str, tuple[float | None, float | None]]

    def _median(self, idx: int) -> float | None:
        values = [v[idx] for v in self.per_app.values() if v[idx] is not None]
        return statistics.median(values) if values else None

    @property
    def median_precision(self) -> float | None:
        return self._median(0)

    @property
    def median_recall(self) -> float | None:
        return self._median(1)


def evaluate_removal(
    apps: Sequence[AppIR],
    libs: Sequence[LibraryProfile],
    truth: GroundTruth,
    cfg: FingerprintConfig,
) -> RemovalReport:
    per_app = {}
    for app in apps:
        original, _ = build_fingerprint(extract_ngram_features(app, cfg.n), cfg)
        stripped, _ = strip_libraries(original, app, libs)
        removed = and_not(original, stripped)
        per_app[app.app_id] = removal_metrics(truth.true_library_fingerprint(app, cfg), removed)
    return RemovalReport(per_app)

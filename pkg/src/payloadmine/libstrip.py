"""Content-based removal of legitimate library code from app fingerprints."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus_ir import AppIR, extract_ngram_features, namespaces_present
from .fingerprint import (
    BitFingerprint,
    FingerprintConfig,
    WidthMismatch,
    and_not,
    build_fingerprint,
    intersect,
    union,
)


@dataclass(frozen=True)
class LibraryProfile:
    lib_name: str
    namespace_prefixes: frozenset[str]
    fingerprint: BitFingerprint


def build_library_profile(versions: Sequence[AppIR], cfg: FingerprintConfig) -> LibraryProfile:
    """Aggregate every supplied version of one library into a single fingerprint."""
    if not versions:
        raise ValueError("a library profile needs at least one version")
    names = {v.app_id for v in versions}
    if len(names) != 1:
        raise ValueError(f"versions belong to different libraries: {sorted(names)}")
    fp = BitFingerprint.empty(cfg.bits)
    prefixes: set[str] = set()
    for version in versions:
        vfp, _ = build_fingerprint(extract_ngram_features(version, cfg.n), cfg)
        fp = union(fp, vfp)
        prefixes.update(version.lib_prefixes)
    return LibraryProfile(versions[0].app_id, frozenset(prefixes), fp)


def build_library_profiles(docs: Sequence[AppIR], cfg: FingerprintConfig) -> list[LibraryProfile]:
    """Group LIBRARY documents by name and build one profile per library, sorted by name."""
    grouped: dict[str, list[AppIR]] = {}
    for doc in docs:
        grouped.setdefault(doc.app_id, []).append(doc)
    return [build_library_profile(grouped[name], cfg) for name in sorted(grouped)]


def strip_libraries(
    app_fp: BitFingerprint, app: AppIR, libs: Sequence[LibraryProfile]
) -> tuple[BitFingerprint, list[str]]:
    """Mask out library-mapped bits for every library whose namespace occurs in the app.

    Removal is by content: payload code hiding under a library namespace keeps its
    bits unless its n-grams also occur in the real library.
    """
    result = app_fp
    applied: list[str] = []
    for lib in libs:
        if lib.fingerprint.width != app_fp.width:
            raise WidthMismatch(f"library {lib.lib_name} width {lib.fingerprint.width} != {app_fp.width}")
        if namespaces_present(app, lib.namespace_prefixes):
            result = and_not(result, lib.fingerprint)
            applied.append(lib.lib_name)
    return result, applied


def removal_metrics(fp_true: BitFingerprint, fp_removed: BitFingerprint) -> tuple[float | None, float | None]:
    """(precision, recall) of library removal; None where the denominator is zero."""
    shared = intersect(fp_true, fp_removed).popcount()
    precision = shared / fp_removed.popcount() if fp_removed.popcount() else None
    recall = shared / fp_true.popcount() if fp_true.popcount() else None
    return precision, recall

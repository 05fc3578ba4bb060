"""Recover payload instructions from mined bits via the bit -> feature-tuple map."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Iterable

from .corpus_ir import AppIR, FeatureTuple, instruction_token, method_ngrams
from .fingerprint import FeatureBitMap


def locate_features(malicious_bits: Iterable[int], bitmap: FeatureBitMap) -> list[FeatureTuple]:
    """Tuples behind every malicious bit; bits this app never set are skipped."""
    found: set[FeatureTuple] = set()
    for bit in malicious_bits:
        found.update(bitmap.get(int(bit), ()))
    return sorted(found, key=lambda t: (t.function_offset, t.bytecode_offset))


def colliding_bits(bitmap: FeatureBitMap, app: AppIR, n: int) -> set[int]:
    """Bits of this app that hold two or more distinct n-gram contents."""
    contents = {}
    for method in app.methods:
        for feat in method_ngrams(method, n):
            contents[feat.location] = feat.content
    return {bit for bit, tuples in bitmap.items() if len({contents[t] for t in tuples}) > 1}


@dataclass
class MethodListing:
    function_offset: int
    class_path: str
    method_name: str
    ranges: list[tuple[int, int]]  # half-open, merged
    lines: list[tuple[int, bytes, bool]] = field(default_factory=list)  # (offset, token, from collision)


@dataclass
class Reconstruction:
    app_id: str
    methods: list[MethodListing]

    def instruction_locations(self) -> set[tuple[int, int]]:
        return {(m.function_offset, j) for m in self.methods for j, _, _ in m.lines}

    def to_text(self) -> str:
        out = []
        for m in self.methods:
            out.append(f"== {m.class_path}.{m.method_name} (fn {m.function_offset}) ==")
            for j, token, flagged in m.lines:
                suffix = "  [collision]" if flagged else ""
                out.append(f"{j}: {token.decode('utf-8')}{suffix}")
        return "\n".join(out) + ("\n" if out else "")


def _merge(ranges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for start, end in sorted(ranges):
        if merged and start <= merged[-1][1]:  # overlapping or adjacent
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def stitch(
    tuples: Iterable[FeatureTuple],
    app: AppIR,
    n: int,
    flagged: Collection[FeatureTuple] = (),
) -> Reconstruction:
    """Mark the n lines behind each tuple and join overlapping windows per method.

    Lines reached only through ``flagged`` tuples (collision suspects) are marked.
    """
    methods = {m.function_offset: m for m in app.methods}
    windows: dict[int, list[tuple[int, int]]] = {}
    clean: dict[int, set[int]] = {}
    for t in tuples:
        method = methods.get(t.function_offset)
        if method is None or t.bytecode_offset < 0 or t.bytecode_offset + n > len(method.instructions):
            raise ValueError(f"feature tuple {t} does not fit app {app.app_id}")
        span = (t.bytecode_offset, t.bytecode_offset + n)
        windows.setdefault(t.function_offset, []).append(span)
        if t not in flagged:
            clean.setdefault(t.function_offset, set()).update(range(*span))
    listings = []
    for fn in sorted(windows):
        method = methods[fn]
        ranges = _merge(windows[fn])
        listing = MethodListing(fn, method.class_path, method.method_name, ranges)
        ok = clean.get(fn, set())
        for start, end in ranges:
            for j in range(start, end):
                listing.lines.append((j, instruction_token(method.instructions[j]), j not in ok))
        listings.append(listing)
    return Reconstruction(app.app_id, listings)


def reconstruct_app(
    malicious_bits: Iterable[int], bitmap: FeatureBitMap, app: AppIR, n: int
) -> Reconstruction:
    tuples = locate_features(malicious_bits, bitmap)
    suspects = colliding_bits(bitmap, app, n)
    flagged = {t for b in suspects for t in bitmap[b]}
    return stitch(tuples, app, n, flagged)

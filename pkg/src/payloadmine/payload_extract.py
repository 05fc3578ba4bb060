"""Pairwise shared-code extraction: every app pair yields one candidate payload."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

from .fingerprint import BitFingerprint, WidthMismatch, intersect


@dataclass(frozen=True)
class CandidatePayload:
    payload_id: str
    fingerprint: BitFingerprint
    apps: tuple[str, str]  # sorted

    @classmethod
    def for_pair(cls, a: str, b: str, fingerprint: BitFingerprint) -> "CandidatePayload":
        if a == b:
            raise ValueError("a candidate payload needs two distinct apps")
        lo, hi = sorted((a, b))
        return cls(payload_id=f"{lo}-{hi}", fingerprint=fingerprint, apps=(lo, hi))


def extract_candidates(stripped: Mapping[str, BitFingerprint], min_bits: int = 1) -> list[CandidatePayload]:
    if len(stripped) < 2:
        raise ValueError("candidate extraction needs at least 2 apps")
    widths = {fp.width for fp in stripped.values()}
    if len(widths) != 1:
        raise WidthMismatch(f"stripped fingerprints have mixed widths {sorted(widths)}")
    out = []
    for a, b in combinations(sorted(stripped), 2):
        shared = intersect(stripped[a], stripped[b])
        if shared.popcount() >= min_bits:
            out.append(CandidatePayload.for_pair(a, b, shared))
    out.sort(key=lambda c: c.payload_id)
    return out

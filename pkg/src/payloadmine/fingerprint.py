"""Bit-vector fingerprints built by feature hashing n-gram contents with djb2.

A fingerprint is stored sparsely as the sorted array of its set-bit indices,
which keeps 8M-bit fingerprints of a few hundred features cheap to combine.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus_ir import FeatureTuple, NGramFeature

DEFAULT_BITS = 8 * 1024 * 1024  # 1024 KB of bit positions
DEFAULT_NGRAM = 2
DJB2_SEED = 5381
_MASK64 = (1 << 64) - 1

FeatureBitMap = dict[int, list[FeatureTuple]]


class WidthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FingerprintConfig:
    n: int = DEFAULT_NGRAM
    bits: int = DEFAULT_BITS

    def __post_init__(self) -> None:
        if self.n < 1 or self.bits < 1:
            raise ValueError(f"invalid fingerprint config n={self.n} bits={self.bits}")


class BitFingerprint:
    """Fixed-width bit set. ``indices`` is sorted, unique, int64 and read-only."""

    __slots__ = ("indices", "width")

    def __init__(self, indices: np.ndarray, width: int, *, _trusted: bool = False):
        if not _trusted:
            indices = np.unique(np.asarray(indices, dtype=np.int64))
            if indices.size and (indices[0] < 0 or indices[-1] >= width):
                raise ValueError("bit index out of range for width")
        indices.setflags(write=False)
        self.indices = indices
        self.width = int(width)

    @classmethod
    def from_bits(cls, bits: Iterable[int], width: int) -> "BitFingerprint":
        return cls(np.fromiter(bits, dtype=np.int64), width)

    @classmethod
    def empty(cls, width: int) -> "BitFingerprint":
        return cls(np.empty(0, dtype=np.int64), width, _trusted=True)

    def popcount(self) -> int:
        return int(self.indices.size)

    def bits(self) -> set[int]:
        return set(self.indices.tolist())

    def __contains__(self, bit: int) -> bool:
        pos = np.searchsorted(self.indices, bit)
        return bool(pos < self.indices.size and self.indices[pos] == bit)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitFingerprint):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.width, self.indices.tobytes()))

    def __repr__(self) -> str:
        head = self.indices[:8].tolist()
        more = "..." if self.indices.size > 8 else ""
        return f"BitFingerprint(width={self.width}, popcount={self.popcount()}, bits={head}{more})"


def djb2(content: bytes) -> int:
    h = DJB2_SEED
    for c in content:
        h = (h * 33 + c) & _MASK64
    return h


def djb2_many(contents: Sequence[bytes]) -> np.ndarray:
    """Vectorized djb2 over many byte strings; returns uint64 hashes in input order."""
    out = np.empty(len(contents), dtype=np.uint64)
    by_len: dict[int, list[int]] = defaultdict(list)
    for i, c in enumerate(contents):
        by_len[len(c)].append(i)
    for length, idx in by_len.items():
        h = np.full(len(idx), DJB2_SEED, dtype=np.uint64)
        if length:
            buf = np.frombuffer(b"".join(contents[i] for i in idx), dtype=np.uint8)
            buf = buf.reshape(len(idx), length).astype(np.uint64)
            for col in range(length):
                h = h * np.uint64(33) + buf[:, col]
        out[idx] = h
    return out


def bit_index(content: bytes, cfg: FingerprintConfig) -> int:
    return djb2(content) % cfg.bits


def bit_indices(contents: Sequence[bytes], cfg: FingerprintConfig) -> np.ndarray:
    if not contents:
        return np.empty(0, dtype=np.int64)
    return (djb2_many(contents) % np.uint64(cfg.bits)).astype(np.int64)


def build_fingerprint(
    features: Sequence[NGramFeature], cfg: FingerprintConfig
) -> tuple[BitFingerprint, FeatureBitMap]:
    bits = bit_indices([f.content for f in features], cfg)
    bitmap: FeatureBitMap = {}
    for b, f in zip(bits.tolist(), features):
        bitmap.setdefault(b, []).append(f.location)
    return BitFingerprint(bits, cfg.bits), bitmap


def _check(a: BitFingerprint, b: BitFingerprint) -> None:
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} vs {b.width}")


def popcount(a: BitFingerprint) -> int:
    return a.popcount()


def intersect(a: BitFingerprint, b: BitFingerprint) -> BitFingerprint:
    _check(a, b)
    return BitFingerprint(np.intersect1d(a.indices, b.indices, assume_unique=True), a.width, _trusted=True)


def union(a: BitFingerprint, b: BitFingerprint) -> BitFingerprint:
    _check(a, b)
    return BitFingerprint(np.union1d(a.indices, b.indices), a.width, _trusted=True)


def and_not(a: BitFingerprint, b: BitFingerprint) -> BitFingerprint:
    """Clear in ``a`` every bit set in ``b`` (a AND NOT b)."""
    _check(a, b)
    return BitFingerprint(np.setdiff1d(a.indices, b.indices, assume_unique=True), a.width, _trusted=True)


def _shared(a: BitFingerprint, b: BitFingerprint) -> int:
    _check(a, b)
    return int(np.intersect1d(a.indices, b.indices, assume_unique=True).size)


def jaccard(a: BitFingerprint, b: BitFingerprint) -> float:
    inter = _shared(a, b)
    total = a.popcount() + b.popcount() - inter
    if total == 0:
        return 1.0  # two empty fingerprints count as identical
    return inter / total


def containment(a: BitFingerprint, b: BitFingerprint) -> float:
    inter = _shared(a, b)
    if a.popcount() == 0:
        raise ValueError("containment of an empty fingerprint is undefined")
    return inter / a.popcount()


# dense path is used while rows x distinct-bits stays under this many cells
_DENSE_CELLS = 40_000_000
# rough cost of one sparse multiply-add relative to one dense one
_SPARSE_PENALTY = 16


def _incidence(fps: Sequence[BitFingerprint]) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """(popcounts, row per set bit, compressed column per set bit, column count)."""
    width = fps[0].width
    for fp in fps:
        if fp.width != width:
            raise WidthMismatch("fingerprint widths differ")
    lengths = np.fromiter((fp.popcount() for fp in fps), dtype=np.int64, count=len(fps))
    all_bits = np.concatenate([fp.indices for fp in fps]) if lengths.sum() else np.empty(0, np.int64)
    cols_used, cols = np.unique(all_bits, return_inverse=True)
    rows = np.repeat(np.arange(len(fps)), lengths)
    return lengths, rows, cols.reshape(-1), max(len(cols_used), 1)


def overlap_pairs(
    fps: Sequence[BitFingerprint], blocks: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All pairs i < j sharing at least one bit, as (i, j, shared bit count).

    With ``blocks`` (one label per fingerprint) only pairs inside the same
    block are produced; the work is then proportional to within-block overlap.
    """
    if len(fps) < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    _, rows, cols, n_cols = _incidence(fps)
    if blocks is not None:
        # give every block its own copy of the column space
        cols = np.asarray(blocks, dtype=np.int64)[rows] * n_cols + cols
        n_cols = int(cols.max()) + 1 if cols.size else 1
    m = sparse.csr_matrix((np.ones(rows.size, dtype=np.int32), (rows, cols)), shape=(len(fps), n_cols))
    prod = sparse.triu(m @ m.T, k=1).tocoo()
    return prod.row.astype(np.int64), prod.col.astype(np.int64), prod.data.astype(np.int64)


def intersection_counts(fps: Sequence[BitFingerprint]) -> np.ndarray:
    """Pairwise popcount(a AND b) for all fingerprints, as an int64 matrix."""
    if not fps:
        return np.zeros((0, 0), dtype=np.int64)
    _, rows, cols, n_cols = _incidence(fps)
    n_rows = len(fps)
    # the sparse product does one multiply-add per (row pair, shared bit)
    sparse_work = float(np.square(np.bincount(cols, minlength=n_cols), dtype=np.float64).sum())
    dense_work = float(n_rows) * n_rows * n_cols
    if n_rows * n_cols <= _DENSE_CELLS and dense_work <= _SPARSE_PENALTY * sparse_work:
        m = np.zeros((n_rows, n_cols), dtype=np.float32)
        m[rows, cols] = 1.0
        # float32 sums of 0/1 are exact below 2**24
        return np.rint(m @ m.T).astype(np.int64)
    m = sparse.csr_matrix(
        (np.ones(rows.size, dtype=np.int32), (rows, cols)), shape=(n_rows, n_cols)
    )
    return (m @ m.T).toarray().astype(np.int64, copy=False)


def jaccard_matrix(fps: Sequence[BitFingerprint]) -> np.ndarray:
    sim = intersection_counts(fps).astype(np.float64)
    sizes = np.diag(sim).copy()
    union_sz = np.add.outer(sizes, sizes)
    union_sz -= sim
    empty = union_sz == 0
    np.divide(sim, union_sz, out=sim, where=~empty)
    sim[empty] = 1.0
    return sim

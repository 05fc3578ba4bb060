"""Speed-ups for large inputs: minHash signatures and prototype-based clustering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import (
    MATRIX_KERNELS,
    ClusteringConfig,
    PayloadClusterSet,
    hac_indices,
    single_linkage_fingerprints,
)
from .fingerprint import BitFingerprint, jaccard_matrix

FNV32_OFFSET = 2166136261
FNV32_PRIME = 16777619


def fnv1a_32(data: bytes) -> int:
    h = FNV32_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV32_PRIME) & 0xFFFFFFFF
    return h


def fnv1a_32_bits(indices: np.ndarray) -> np.ndarray:
    """FNV-1a-32 of each index's 4 little-endian bytes, vectorized."""
    idx = np.asarray(indices, dtype=np.uint64)
    h = np.full(idx.shape, FNV32_OFFSET, dtype=np.uint32)
    prime = np.uint32(FNV32_PRIME)
    for shift in (0, 8, 16, 24):
        h ^= ((idx >> np.uint64(shift)) & np.uint64(0xFF)).astype(np.uint32)
        h *= prime
    return h


@dataclass(frozen=True)
class MinHashConfig:
    k: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("minHash needs k >= 1")

    def random_numbers(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.integers(0, 1 << 32, size=self.k, dtype=np.uint64).astype(np.uint32)


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    values: np.ndarray  # uint32, length k
    seed: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MinHashSignature):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.seed, self.values.tobytes()))


def minhash_signature(
    fp: BitFingerprint, cfg: MinHashConfig, randoms: np.ndarray | None = None
) -> MinHashSignature:
    if fp.popcount() == 0:
        raise ValueError("cannot sign an all-zero fingerprint")
    if randoms is None:
        randoms = cfg.random_numbers()
    base = fnv1a_32_bits(fp.indices)
    # h_i(b) = fnv(b) XOR r_i; keep the minimum per hash function
    values = np.bitwise_xor(base[:, None], randoms[None, :]).min(axis=0)
    return MinHashSignature(values.astype(np.uint32), cfg.seed)


def minhash_signatures(fps: Sequence[BitFingerprint], cfg: MinHashConfig) -> list[MinHashSignature]:
    randoms = cfg.random_numbers()
    return [minhash_signature(fp, cfg, randoms) for fp in fps]


def signature_similarity(a: MinHashSignature, b: MinHashSignature) -> float:
    if a.values.shape != b.values.shape:
        raise ValueError(f"signature lengths differ: {a.values.size} vs {b.values.size}")
    if a.seed != b.seed:
        raise ValueError("signatures come from different seeds")
    return float(np.count_nonzero(a.values == b.values)) / a.values.size


def signature_similarity_matrix(sigs: Sequence[MinHashSignature]) -> np.ndarray:
    if not sigs:
        return np.zeros((0, 0))
    k = sigs[0].values.size
    if any(s.values.size != k or s.seed != sigs[0].seed for s in sigs):
        raise ValueError("signatures must share length and seed")
    table = np.stack([s.values for s in sigs])
    n = len(sigs)
    out = np.empty((n, n))
    for i in range(n):
        row = np.count_nonzero(table[i:] == table[i], axis=1) / k
        out[i, i:] = row
        out[i:, i] = row
    return out


MATRIX_KERNELS[signature_similarity] = signature_similarity_matrix


@dataclass(frozen=True)
class PrototypeConfig:
    group_size: int = 150
    inner_theta: float | None = None  # None -> use the global theta
    seed: int = 0

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


def prototype_cluster(
    members: Sequence[tuple[str, BitFingerprint]],
    pcfg: PrototypeConfig = PrototypeConfig(),
    ccfg: ClusteringConfig = ClusteringConfig(),
) -> PayloadClusterSet:
    """Two-level approximate clustering.

    Members are shuffled (seeded) into groups, clustered within each group,
    each sub-cluster is summarized by its intersection fingerprint, and the
    summaries are clustered again. With a single group the within-group
    result is returned as is.
    """
    if not members:
        raise ValueError("cannot cluster an empty member list")
    ids = [m[0] for m in members]
    fps = [m[1] for m in members]
    inner_theta = ccfg.theta if pcfg.inner_theta is None else pcfg.inner_theta
    order = np.random.default_rng(pcfg.seed).permutation(len(members))
    groups = [order[i : i + pcfg.group_size] for i in range(0, len(order), pcfg.group_size)]

    if ccfg.linkage == "single":
        # all groups at once: merging is confined to pairs inside one group
        blocks = np.empty(len(members), dtype=np.int64)
        blocks[order] = np.arange(len(members)) // pcfg.group_size
        sub_clusters = single_linkage_fingerprints(fps, inner_theta, blocks)
    else:
        sub_clusters = []
        for group in groups:
            group = np.sort(group)
            local = hac_indices(jaccard_matrix([fps[p] for p in group]), inner_theta, ccfg.linkage)
            sub_clusters.extend([int(group[q]) for q in local_members] for local_members in local)
        sub_clusters.sort(key=lambda c: c[0])

    if len(groups) == 1:
        final = sub_clusters
    else:
        prototypes = _prototypes(fps, sub_clusters)
        if ccfg.linkage == "single":
            top = single_linkage_fingerprints(prototypes, ccfg.theta)
        else:
            top = hac_indices(jaccard_matrix(prototypes), ccfg.theta, ccfg.linkage)
        final = [sorted(p for s in merged for p in sub_clusters[s]) for merged in top]
    final.sort(key=lambda c: c[0])
    return PayloadClusterSet([[ids[p] for p in c] for c in final])


def _prototypes(fps: Sequence[BitFingerprint], clusters: Sequence[Sequence[int]]) -> list[BitFingerprint]:
    """cluster_fingerprint of every cluster (lists of positions into fps) in one pass."""
    width = fps[0].width
    lengths = np.fromiter((fp.popcount() for fp in fps), dtype=np.int64, count=len(fps))
    if not lengths.sum():
        return [BitFingerprint.empty(width) for _ in clusters]
    cols_used, cols = np.unique(np.concatenate([fp.indices for fp in fps]), return_inverse=True)
    label = np.empty(len(fps), dtype=np.int64)
    for c, positions in enumerate(clusters):
        label[list(positions)] = c
    sizes = np.array([len(c) for c in clusters], dtype=np.int64)
    n_cols = cols_used.size
    # a bit belongs to the prototype when every member of the cluster carries it
    keys, counts = np.unique(np.repeat(label, lengths) * n_cols + cols.reshape(-1), return_counts=True)
    owner = keys // n_cols
    keep = counts == sizes[owner]
    owner, bits = owner[keep], cols_used[keys[keep] % n_cols]
    bounds = np.searchsorted(owner, np.arange(len(clusters) + 1))
    return [BitFingerprint(bits[bounds[c] : bounds[c + 1]], width, _trusted=True) for c in range(len(clusters))]

"""Threshold-cut hierarchical agglomerative clustering over fingerprints."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .fingerprint import BitFingerprint, WidthMismatch, jaccard, jaccard_matrix, overlap_pairs

LINKAGES = ("single", "average")

# pairwise similarity -> vectorized all-pairs version
MATRIX_KERNELS: dict[Callable, Callable[[Sequence[Any]], np.ndarray]] = {jaccard: jaccard_matrix}


@dataclass(frozen=True)
class ClusteringConfig:
    theta: float = 0.85
    linkage: str = "single"

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}")


@dataclass
class PayloadClusterSet:
    clusters: list[list[str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clusters)

    def members(self) -> list[str]:
        return [m for c in self.clusters for m in c]

    def to_tsv(self) -> str:
        return "".join(f"{i}\t{m}\n" for i, c in enumerate(self.clusters) for m in c)

    @classmethod
    def from_tsv(cls, text: str) -> "PayloadClusterSet":
        clusters: dict[int, list[str]] = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            idx, sep, member = line.partition("\t")
            if not sep or not idx.isdigit():
                raise ValueError(f"line {line_no}: expected 'cluster_index<TAB>member_id'")
            clusters.setdefault(int(idx), []).append(member)
        return cls([clusters[i] for i in sorted(clusters)])


def similarity_matrix(items: Sequence[Any], sim: Callable[[Any, Any], float] | None = None) -> np.ndarray:
    if sim is None:
        sim = _default_similarity(items[0])
    kernel = MATRIX_KERNELS.get(sim)
    if kernel is not None:
        return kernel(items)
    n = len(items)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = sim(items[i], items[j])
    return out


def _default_similarity(item: Any) -> Callable[[Any, Any], float]:
    if isinstance(item, BitFingerprint):
        return jaccard
    from .scale import MinHashSignature, signature_similarity

    if isinstance(item, MinHashSignature):
        return signature_similarity
    raise TypeError(f"no default similarity for {type(item).__name__}")


def hac_indices(sim: np.ndarray, theta: float, linkage: str = "single") -> list[list[int]]:
    """Cluster positions 0..n-1 given a symmetric similarity matrix.

    Clusters come out ordered by their smallest position, members ascending.
    """
    n = sim.shape[0]
    if n == 0:
        return []
    if linkage == "single":
        # a threshold cut of the single-linkage dendrogram is exactly the
        # connected components of the graph with edges sim >= theta
        adj = csr_matrix(np.triu(sim >= theta, k=1))
        _, labels = connected_components(adj, directed=False)
        groups: dict[int, list[int]] = {}
        for pos, lab in enumerate(labels.tolist()):
            groups.setdefault(lab, []).append(pos)
        return sorted(groups.values(), key=lambda g: g[0])
    if linkage == "average":
        return _average_linkage(sim, theta)
    raise ValueError(f"unknown linkage {linkage!r}")


def _average_linkage(sim: np.ndarray, theta: float) -> list[list[int]]:
    n = sim.shape[0]
    work = sim.astype(np.float64, copy=True)
    np.fill_diagonal(work, -np.inf)
    work[np.tril_indices(n)] = -np.inf
    sizes = np.ones(n)
    members = {i: [i] for i in range(n)}
    # each cluster lives at the row of its smallest member, so the first argmax
    # in row-major order is the tie-break on smallest member positions
    while len(members) > 1:
        flat = int(np.argmax(work))
        i, j = divmod(flat, n)
        if work[i, j] < theta:
            break
        # Lance-Williams update for group-average similarity
        merged = (sizes[i] * _row(work, i) + sizes[j] * _row(work, j)) / (sizes[i] + sizes[j])
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
        work[j, :] = -np.inf
        work[:, j] = -np.inf
        alive = np.array(sorted(members))
        alive = alive[alive != i]
        lo, hi = alive[alive < i], alive[alive > i]
        work[lo, i] = merged[lo]
        work[i, hi] = merged[hi]
    return [sorted(members[k]) for k in sorted(members)]


def _row(upper: np.ndarray, i: int) -> np.ndarray:
    """Symmetric view of row i from an upper-triangular matrix."""
    row = upper[i, :].copy()
    row[:i] = upper[:i, i]
    return row


def single_linkage_fingerprints(
    fps: Sequence[BitFingerprint], theta: float, blocks: np.ndarray | None = None
) -> list[list[int]]:
    """Single-linkage threshold cut under jaccard without an n x n matrix.

    Only pairs that share a bit can reach a positive threshold, so the graph
    is built from the sparse overlap pairs. ``blocks`` restricts merging to
    fingerprints with equal block labels. Same output order as hac_indices.
    """
    n = len(fps)
    if n == 0:
        return []
    blocks = np.zeros(n, dtype=np.int64) if blocks is None else np.asarray(blocks, dtype=np.int64)
    if theta <= 0.0:
        # every pair qualifies: one cluster per block
        src = np.arange(n)
        dst = _first_of_block(src, blocks)
    else:
        i, j, inter = overlap_pairs(fps, blocks)
        sizes = np.fromiter((fp.popcount() for fp in fps), dtype=np.int64, count=n)
        sim = inter / (sizes[i] + sizes[j] - inter)
        keep = sim >= theta
        src, dst = i[keep], j[keep]
        # two empty fingerprints have jaccard 1.0 and never show up as overlaps
        empties = np.flatnonzero(sizes == 0)
        if empties.size:
            src = np.concatenate([src, empties])
            dst = np.concatenate([dst, _first_of_block(empties, blocks[empties])])
    adj = csr_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    # order clusters by smallest member: relabel by first occurrence
    _, first_pos, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_pos))[inv.reshape(-1)]
    order = np.argsort(rank, kind="stable")
    bounds = np.flatnonzero(np.diff(rank[order])) + 1
    return [g.tolist() for g in np.split(order, bounds)]


def _first_of_block(positions: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """For each position, the smallest position sharing its block label."""
    _, inv = np.unique(blocks, return_inverse=True)
    inv = inv.reshape(-1)
    first = np.full(int(inv.max()) + 1, np.iinfo(np.int64).max)
    np.minimum.at(first, inv, positions)
    return first[inv]


def hac(
    members: Sequence[tuple[str, Any]],
    cfg: ClusteringConfig = ClusteringConfig(),
    sim: Callable[[Any, Any], float] | None = None,
) -> PayloadClusterSet:
    if not members:
        raise ValueError("cannot cluster an empty member list")
    ids = [m[0] for m in members]
    if len(set(ids)) != len(ids):
        raise ValueError("member ids must be unique")
    items = [m[1] for m in members]
    if cfg.linkage == "single" and sim in (None, jaccard) and all(isinstance(x, BitFingerprint) for x in items):
        groups = single_linkage_fingerprints(items, cfg.theta)
    else:
        groups = hac_indices(similarity_matrix(items, sim), cfg.theta, cfg.linkage)
    return PayloadClusterSet([[ids[p] for p in g] for g in groups])


def cluster_fingerprint(member_fps: Sequence[BitFingerprint]) -> BitFingerprint:
    """AND over all member fingerprints: the bits every member shares."""
    if not member_fps:
        raise ValueError("cluster fingerprint of an empty cluster")
    width = member_fps[0].width
    if any(fp.width != width for fp in member_fps):
        raise WidthMismatch("member fingerprints have mixed widths")
    if len(member_fps) == 1:
        return member_fps[0]
    # indices are unique per fingerprint, so a bit is shared by all members
    # exactly when it occurs once in each of them
    bits, counts = np.unique(np.concatenate([fp.indices for fp in member_fps]), return_counts=True)
    return BitFingerprint(bits[counts == len(member_fps)], width, _trusted=True)

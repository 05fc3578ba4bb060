"""Iterative selection of popular payload clusters and grouping of apps.

Clusters are ranked by entry count ``l``, then distinct apps ``m``, then the
popcount ``k`` of the cluster fingerprint. Once a cluster is selected its
apps become inactive and every entry touching them is dropped, so each app
ends up contributing to at most one payload version.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .clustering import ClusteringConfig, PayloadClusterSet, cluster_fingerprint, hac
from .fingerprint import BitFingerprint
from .payload_extract import CandidatePayload


@dataclass(frozen=True)
class MiningConfig:
    min_k: int = 70
    min_l: int = 2
    refine_step: float = 0.05

    def __post_init__(self) -> None:
        if self.min_k < 0 or self.min_l < 1 or not 0 < self.refine_step <= 1:
            raise ValueError(f"invalid mining config {self}")


@dataclass(frozen=True)
class PayloadClusterStats:
    l: int
    m: int
    k: int


@dataclass(frozen=True)
class SelectedCluster:
    rank: int
    fingerprint: BitFingerprint
    apps: tuple[str, ...]
    payload_ids: tuple[str, ...]
    stats: PayloadClusterStats


@dataclass
class MiningResult:
    selected: list[SelectedCluster] = field(default_factory=list)
    unclustered: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "selected": [
                {
                    "rank": s.rank,
                    "l": s.stats.l,
                    "m": s.stats.m,
                    "k": s.stats.k,
                    "apps": list(s.apps),
                    "payload_ids": list(s.payload_ids),
                    "width": s.fingerprint.width,
                    "bits": s.fingerprint.indices.tolist(),
                }
                for s in self.selected
            ],
            "unclustered": list(self.unclustered),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MiningResult":
        data = json.loads(text)
        selected = [
            SelectedCluster(
                rank=s["rank"],
                fingerprint=BitFingerprint.from_bits(s["bits"], s["width"]),
                apps=tuple(s["apps"]),
                payload_ids=tuple(s["payload_ids"]),
                stats=PayloadClusterStats(s["l"], s["m"], s["k"]),
            )
            for s in data["selected"]
        ]
        return cls(selected, list(data["unclustered"]))

    def to_text(self) -> str:
        lines = []
        for s in self.selected:
            lines.append(f"cluster {s.rank}: l={s.stats.l} m={s.stats.m} k={s.stats.k}")
            lines.append("  apps: " + " ".join(s.apps))
            lines.append("  payloads: " + " ".join(s.payload_ids))
        lines.append("unclustered: " + " ".join(self.unclustered))
        return "\n".join(lines) + "\n"


@dataclass
class _Pending:
    entries: tuple[CandidatePayload, ...]
    theta: float


def cluster_stats(entries: Sequence[CandidatePayload]) -> tuple[PayloadClusterStats, BitFingerprint]:
    fp = cluster_fingerprint([e.fingerprint for e in entries])
    apps = {a for e in entries for a in e.apps}
    return PayloadClusterStats(len(entries), len(apps), fp.popcount()), fp


def next_theta(theta: float, cfg: MiningConfig) -> float:
    # rounding keeps repeated 0.05 steps from drifting past the 1.0 cap
    return min(1.0, round(theta + cfg.refine_step, 9))


def refine_cluster(
    entries: Sequence[CandidatePayload], theta: float, cfg: MiningConfig, linkage: str = "single"
) -> list[list[CandidatePayload]]:
    """Split an under-k cluster by re-clustering its entries at a stricter threshold.

    At the 1.0 cap, groups that still fall short of ``min_k`` are dropped.
    """
    sub_theta = next_theta(theta, cfg)
    by_id = {e.payload_id: e for e in entries}
    groups = hac([(e.payload_id, e.fingerprint) for e in entries], ClusteringConfig(sub_theta, linkage))
    out = []
    for group in groups.clusters:
        members = [by_id[pid] for pid in group]
        if sub_theta >= 1.0 and cluster_stats(members)[0].k < cfg.min_k:
            continue
        out.append(members)
    return out


def _rank_key(stats: PayloadClusterStats, entries: Sequence[CandidatePayload]) -> tuple:
    apps = sorted({a for e in entries for a in e.apps})
    return (-stats.l, -stats.m, -stats.k, apps, [e.payload_id for e in entries])


def mine(
    clusters: PayloadClusterSet,
    candidates: Mapping[str, CandidatePayload] | Iterable[CandidatePayload],
    cfg: MiningConfig = MiningConfig(),
    ccfg: ClusteringConfig = ClusteringConfig(),
    apps: Iterable[str] | None = None,
) -> MiningResult:
    """Select payload clusters until none qualifies.

    ``apps`` lists every input app so that apps without any candidate still
    show up as unclustered; by default the apps named by candidates are used.
    """
    if not isinstance(candidates, Mapping):
        candidates = {c.payload_id: c for c in candidates}
    all_apps = set(apps) if apps is not None else set()
    all_apps.update(a for c in candidates.values() for a in c.apps)

    pool = [_Pending(tuple(candidates[pid] for pid in c), ccfg.theta) for c in clusters.clusters]
    inactive: set[str] = set()
    cache: dict[tuple[str, ...], tuple[PayloadClusterStats, BitFingerprint]] = {}
    result = MiningResult()

    while pool:
        ranked = []
        for item in pool:
            entries = tuple(e for e in item.entries if not (e.apps[0] in inactive or e.apps[1] in inactive))
            if len(entries) < cfg.min_l:
                continue
            item = _Pending(entries, item.theta)
            key = tuple(e.payload_id for e in entries)
            if key not in cache:
                cache[key] = cluster_stats(entries)
            stats, _ = cache[key]
            ranked.append((_rank_key(stats, entries), item, key))
        if not ranked:
            break
        ranked.sort(key=lambda r: r[0])
        _, top, key = ranked[0]
        stats, fp = cache[key]
        pool = [r[1] for r in ranked[1:]]
        if stats.k < cfg.min_k:
            sub_theta = next_theta(top.theta, cfg)
            pool.extend(
                _Pending(tuple(sub), sub_theta)
                for sub in refine_cluster(top.entries, top.theta, cfg, ccfg.linkage)
            )
            continue
        chosen_apps = tuple(sorted({a for e in top.entries for a in e.apps}))
        result.selected.append(
            SelectedCluster(len(result.selected) + 1, fp, chosen_apps, key, stats)
        )
        inactive.update(chosen_apps)

    result.unclustered = sorted(all_apps - inactive)
    return result


def group_apps(result: MiningResult) -> list[list[str]]:
    groups = [list(s.apps) for s in result.selected]
    groups.extend([a] for a in result.unclustered)
    return groups

"""Weighted trust ranking over the proximity graph.

Trust starts on a handful of trusted nodes and is redistributed for a
logarithmic number of rounds: each round, every node sends its entire
trust to its neighbors in proportion to edge weight.  Early termination
is the point: a random walk this short rarely crosses the sparse cut
into a Sybil region, so Sybils end up with little trust.  Ranking uses
trust normalized by weighted degree, which stops high-degree nodes
(and gateways stuffed with attack edges) from looking trustworthy.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .proximity import NodeKind, ProximityGraph

logger = logging.getLogger(__name__)


@dataclass
class TrustVector:
    trust: dict[str, float]
    iterations: int

    def total(self) -> float:
        return sum(self.trust.values())


@dataclass
class RankedNode:
    node_id: str
    kind: NodeKind
    trusted: bool
    trust: float
    weighted_degree: float
    score: float


@dataclass
class RankedList:
    """Nodes sorted ascending by degree-normalized trust (suspects first)."""

    entries: list[RankedNode] = field(default_factory=list)

    def scores_by_kind(self) -> tuple[np.ndarray, np.ndarray]:
        honest = np.array([e.score for e in self.entries if e.kind is NodeKind.HONEST])
        sybil = np.array([e.score for e in self.entries if e.kind is NodeKind.SYBIL])
        return honest, sybil


def default_iterations(node_count: int) -> int:
    return max(1, math.ceil(math.log2(max(node_count, 2))))


def propagate_trust(
    graph: ProximityGraph,
    trusted: Optional[list[str]] = None,
    iterations: Optional[int] = None,
) -> TrustVector:
    """Run weight-proportional trust power iteration.

    Total trust equals the honest population size, split equally over the
    trusted seeds; the scale is arbitrary since ranking is normalized.
    Trust held by an isolated node evaporates (it has no edges to send
    on), which is logged as a warning.
    """
    trusted = graph.trusted_ids() if trusted is None else sorted(trusted)
    if not trusted:
        raise ValueError("trust propagation needs at least one trusted node")
    ids = sorted(graph.nodes)
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    iters = default_iterations(n) if iterations is None else iterations

    m = len(graph.edges)
    src = np.empty(2 * m, dtype=np.int64)
    dst = np.empty(2 * m, dtype=np.int64)
    wts = np.empty(2 * m, dtype=np.float64)
    for k, ((u, v), w) in enumerate(graph.edges.items()):
        iu, iv = index[u], index[v]
        src[k], dst[k], wts[k] = iu, iv, w
        src[m + k], dst[m + k], wts[m + k] = iv, iu, w
    wdeg = np.bincount(src, weights=wts, minlength=n)

    total_trust = float(len(graph.ids_of_kind(NodeKind.HONEST)))
    trust = np.zeros(n)
    for nid in trusted:
        if wdeg[index[nid]] == 0:
            logger.warning("trusted node %s is isolated; its trust will be lost", nid)
        trust[index[nid]] = total_trust / len(trusted)

    if m:
        share = wts / wdeg[src]
        for _ in range(iters):
            trust = np.bincount(dst, weights=trust[src] * share, minlength=n)
    else:
        trust[:] = 0.0
    return TrustVector(trust={nid: float(trust[index[nid]]) for nid in ids}, iterations=iters)


def rank_nodes(graph: ProximityGraph, trust: TrustVector) -> RankedList:
    """Score = trust / weighted degree, ascending; zero-degree nodes score 0."""
    entries = []
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        wdeg = graph.weighted_degree(nid)
        t = trust.trust[nid]
        score = t / wdeg if wdeg > 0 else 0.0
        entries.append(
            RankedNode(
                node_id=nid, kind=node.kind, trusted=node.trusted,
                trust=t, weighted_degree=wdeg, score=score,
            )
        )
    entries.sort(key=lambda e: (e.score, e.node_id))
    return RankedList(entries=entries)


def auc(ranked: RankedList) -> float:
    """Probability a random Sybil scores below a random honest node,
    counting ties as one half (rank-sum form of the Mann-Whitney U)."""
    honest, sybil = ranked.scores_by_kind()
    if honest.size == 0 or sybil.size == 0:
        raise ValueError("AUC needs both classes present")
    scores = np.concatenate([honest, sybil])
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = (upper - counts + 1 + upper) / 2.0
    ranks = avg_rank[inverse]
    n_h = honest.size
    rank_sum_honest = ranks[:n_h].sum()
    u_honest = rank_sum_honest - n_h * (n_h + 1) / 2.0
    return float(u_honest / (n_h * sybil.size))


def fp_fn_at_cutoff(ranked: RankedList, cutoff_fraction: float) -> tuple[float, float]:
    """Flag the bottom fraction as Sybils; return (FP rate, FN rate)."""
    if not 0 < cutoff_fraction < 1:
        raise ValueError("cutoff fraction must be in (0, 1)")
    n = len(ranked.entries)
    flagged = ranked.entries[: int(cutoff_fraction * n)]
    honest_total = sum(1 for e in ranked.entries if e.kind is NodeKind.HONEST)
    sybil_total = n - honest_total
    if honest_total == 0 or sybil_total == 0:
        raise ValueError("FP/FN need both classes present")
    fp = sum(1 for e in flagged if e.kind is NodeKind.HONEST) / honest_total
    caught = sum(1 for e in flagged if e.kind is NodeKind.SYBIL)
    fn = (sybil_total - caught) / sybil_total
    return fp, fn


RANKED_CSV_COLUMNS = ["node_id", "kind", "trusted", "trust", "weighted_degree", "score", "rank"]


def write_ranked_csv(path: Path, ranked: RankedList) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RANKED_CSV_COLUMNS)
        for rank, e in enumerate(ranked.entries):
            writer.writerow(
                [e.node_id, e.kind.value, int(e.trusted),
                 f"{e.trust:.12g}", f"{e.weighted_degree:.12g}", f"{e.score:.12g}", rank]
            )


def write_metrics_json(
    path: Path, *, auc_value: float, fp: float, fn: float, cutoff: float, iterations: int
) -> None:
    payload = {"auc": auc_value, "fp": fp, "fn": fn, "cutoff": cutoff, "iterations": iterations}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

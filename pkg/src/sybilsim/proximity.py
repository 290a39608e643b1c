"""Proximity-graph substrate for Sybil detection.

Devices that pass a short-range radio challenge while physically close
gain a collocation edge; repeat encounters increment the edge weight.
Software-only Sybils cannot hear a real device's beacon, so the only
Sybil-to-honest edges possible are through gateway Sybils backed by a
physical radio.  Honest encounters are simulated as a power-law pairing
process, snapshotted once the giant component covers the connectivity
target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

# challenge success model, fitted to short-range radio measurements:
# static pairs decode reliably out to 80 m and never beyond 160 m;
# moving pairs start near-perfect, fall to 10% at 140 m, then to zero.
STATIC_FULL_RANGE_M = 80.0
STATIC_ZERO_RANGE_M = 160.0
DRIVING_FULL_RANGE_M = 80.0
DRIVING_KNEE_RANGE_M = 140.0
DRIVING_ZERO_RANGE_M = 160.0
DRIVING_FULL_PROB = 0.98
DRIVING_KNEE_PROB = 0.10


class ChallengeMode(Enum):
    STATIC = "static"
    DRIVING = "driving"


class NodeKind(Enum):
    HONEST = "honest"
    SYBIL = "sybil"


@dataclass(frozen=True)
class ChallengeContext:
    distance_m: float
    mode: ChallengeMode = ChallengeMode.STATIC

    def __post_init__(self) -> None:
        if self.distance_m < 0:
            raise ValueError("distance must be nonnegative")


def challenge_success_prob(ctx: ChallengeContext) -> float:
    """Probability that a proximity challenge at this distance succeeds."""
    d = ctx.distance_m
    if ctx.mode is ChallengeMode.STATIC:
        if d <= STATIC_FULL_RANGE_M:
            return 1.0
        if d >= STATIC_ZERO_RANGE_M:
            return 0.0
        return (STATIC_ZERO_RANGE_M - d) / (STATIC_ZERO_RANGE_M - STATIC_FULL_RANGE_M)
    if d <= DRIVING_FULL_RANGE_M:
        return DRIVING_FULL_PROB
    if d <= DRIVING_KNEE_RANGE_M:
        f = (d - DRIVING_FULL_RANGE_M) / (DRIVING_KNEE_RANGE_M - DRIVING_FULL_RANGE_M)
        return DRIVING_FULL_PROB + f * (DRIVING_KNEE_PROB - DRIVING_FULL_PROB)
    if d <= DRIVING_ZERO_RANGE_M:
        f = (d - DRIVING_KNEE_RANGE_M) / (DRIVING_ZERO_RANGE_M - DRIVING_KNEE_RANGE_M)
        return DRIVING_KNEE_PROB * (1.0 - f)
    return 0.0


@dataclass
class Node:
    kind: NodeKind
    trusted: bool = False
    gateway: bool = False


class ProximityGraph:
    """Undirected weighted graph of devices with trusted-node flags."""

    def __init__(self) -> None:
        self.nodes: dict[str, Node] = {}
        self.edges: dict[tuple[str, str], int] = {}
        self._wdeg: dict[str, float] = {}

    # ----- construction ----------------------------------------------------

    def add_node(self, node_id: str, kind: NodeKind, trusted: bool = False, gateway: bool = False) -> None:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node {node_id}")
        if trusted and kind is not NodeKind.HONEST:
            raise ValueError("only honest nodes can be trusted")
        self.nodes[node_id] = Node(kind=kind, trusted=trusted, gateway=gateway)
        self._wdeg[node_id] = 0.0

    def record_collocation(self, u: str, v: str, weight: int = 1) -> None:
        """Add ``weight`` successful encounters between u and v."""
        if u == v:
            raise ValueError("self-collocation is meaningless")
        if weight < 1:
            raise ValueError("weight increments must be positive")
        if u not in self.nodes or v not in self.nodes:
            raise KeyError("both endpoints must exist")
        key = (u, v) if u < v else (v, u)
        self.edges[key] = self.edges.get(key, 0) + weight
        self._wdeg[u] += weight
        self._wdeg[v] += weight

    # ----- queries -----------------------------------------------------------

    def weighted_degree(self, node_id: str) -> float:
        return self._wdeg[node_id]

    def ids_of_kind(self, kind: NodeKind) -> list[str]:
        return sorted(nid for nid, n in self.nodes.items() if n.kind is kind)

    def trusted_ids(self) -> list[str]:
        return sorted(nid for nid, n in self.nodes.items() if n.trusted)

    def gateway_ids(self) -> list[str]:
        return sorted(nid for nid, n in self.nodes.items() if n.gateway)

    def total_edge_weight(self) -> int:
        return sum(self.edges.values())

    def largest_component_fraction(self) -> float:
        if not self.nodes:
            return 0.0
        index = {nid: i for i, nid in enumerate(self.nodes)}
        parent = list(range(len(index)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for (u, v) in self.edges:
            ru, rv = find(index[u]), find(index[v])
            if ru != rv:
                parent[ru] = rv
        sizes: dict[int, int] = {}
        for i in range(len(index)):
            r = find(i)
            sizes[r] = sizes.get(r, 0) + 1
        return max(sizes.values()) / len(index)

    def illicit_edges(self) -> list[tuple[str, str]]:
        """Edges joining a non-gateway Sybil to an honest node (must be empty)."""
        bad = []
        for (u, v) in self.edges:
            nu, nv = self.nodes[u], self.nodes[v]
            pair = {nu.kind, nv.kind}
            if pair == {NodeKind.HONEST, NodeKind.SYBIL}:
                sybil = nu if nu.kind is NodeKind.SYBIL else nv
                if not sybil.gateway:
                    bad.append((u, v))
        return bad


def attempt_collocation(
    graph: ProximityGraph,
    u: str,
    v: str,
    ctx: ChallengeContext,
    rng: np.random.Generator,
) -> bool:
    """Run one proximity challenge; on success the edge weight grows by 1.

    Colluding Sybils always pass with each other.  A Sybil can pass
    against an honest device only when its operator has a physical radio
    on site (the gateway flag); otherwise there is nothing to hear.
    """
    if u == v:
        raise ValueError("a device cannot challenge itself")
    nu, nv = graph.nodes[u], graph.nodes[v]
    if nu.kind is NodeKind.SYBIL and nv.kind is NodeKind.SYBIL:
        success = True
    else:
        if nu.kind is not nv.kind:  # honest vs sybil
            sybil = nu if nu.kind is NodeKind.SYBIL else nv
            if not sybil.gateway:
                return False
        success = rng.random() < challenge_success_prob(ctx)
    if success:
        graph.record_collocation(u, v)
    return success


@dataclass
class EncounterModel:
    n: int
    alpha: float = 2.0
    connectivity_target: float = 0.999
    max_events: Optional[int] = None
    batch: int = 40000

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("need at least two honest users")
        if not 0 < self.connectivity_target <= 1:
            raise ValueError("connectivity target must be in (0, 1]")
        if self.alpha <= 1:
            raise ValueError("power-law exponent must exceed 1")


def power_law_weights(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Per-node encounter weights via inverse transform, clamped to n."""
    u = rng.random(n)
    return np.minimum(np.maximum(u, 1e-300) ** (-1.0 / (alpha - 1.0)), float(n))


def sample_weighted_pairs(
    weights: np.ndarray, count: int, rng: np.random.Generator, batch: int = 40000
) -> "PairStream":
    return PairStream(weights, rng, batch)


class PairStream:
    """Endless stream of (i, j) pairs drawn with probability ~ w_i * w_j, i != j.

    Both endpoints are sampled independently in proportion to weight and
    equal pairs are rejected, which matches the joint distribution at
    near-linear cost.
    """

    def __init__(self, weights: np.ndarray, rng: np.random.Generator, batch: int = 40000):
        self._p = weights / weights.sum()
        self._n = len(weights)
        self._rng = rng
        self._batch = batch
        self._buf_a = np.empty(0, dtype=np.int64)
        self._buf_b = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next_pair(self) -> tuple[int, int]:
        while True:
            if self._pos >= len(self._buf_a):
                self._buf_a = self._rng.choice(self._n, size=self._batch, p=self._p)
                self._buf_b = self._rng.choice(self._n, size=self._batch, p=self._p)
                self._pos = 0
            i = int(self._buf_a[self._pos])
            j = int(self._buf_b[self._pos])
            self._pos += 1
            if i != j:
                return i, j


def grow_honest_graph(model: EncounterModel, rng: np.random.Generator) -> ProximityGraph:
    """Run the encounter process until the giant component covers the
    connectivity target, then return the snapshot as a proximity graph."""
    n = model.n
    weights = power_law_weights(n, model.alpha, rng)
    stream = PairStream(weights, rng, model.batch)
    max_events = model.max_events if model.max_events is not None else 10_000 * n

    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    edges: dict[tuple[int, int], int] = {}
    need = math.ceil(model.connectivity_target * n)
    biggest = 1
    events = 0
    while biggest < need:
        if events >= max_events:
            raise RuntimeError(
                f"encounter process did not reach {model.connectivity_target:.4%} "
                f"connectivity within {max_events} events"
            )
        i, j = stream.next_pair()
        events += 1
        key = (i, j) if i < j else (j, i)
        edges[key] = edges.get(key, 0) + 1
        ri, rj = find(i), find(j)
        if ri != rj:
            if size[ri] < size[rj]:
                ri, rj = rj, ri
            parent[rj] = ri
            size[ri] += size[rj]
            if size[ri] > biggest:
                biggest = int(size[ri])

    graph = ProximityGraph()
    for i in range(n):
        graph.add_node(f"h{i}", NodeKind.HONEST)
    for (i, j), w in edges.items():
        graph.record_collocation(f"h{i}", f"h{j}", weight=w)
    return graph


def seed_trusted(
    graph: ProximityGraph,
    k: int,
    rng: np.random.Generator,
    placement: str = "random",
    visit_edges: int = 0,
) -> list[str]:
    """Flag k honest nodes as trusted infrastructure.

    ``random`` picks uniformly; ``degree_spread`` picks one node from each
    of k weighted-degree strata so trust seeds cover the degree spectrum.
    ``visit_edges`` optionally adds that many weight-1 edges from each
    trusted node to degree-proportional honest visitors.
    """
    honest = graph.ids_of_kind(NodeKind.HONEST)
    if k < 1:
        raise ValueError("need at least one trusted seed")
    if k > len(honest):
        raise ValueError(f"cannot seed {k} trusted nodes among {len(honest)} honest")
    if placement == "random":
        picks = [honest[i] for i in rng.choice(len(honest), size=k, replace=False)]
    elif placement == "degree_spread":
        ranked = sorted(honest, key=lambda nid: (graph.weighted_degree(nid), nid))
        picks = []
        stride = len(ranked) / k
        for s in range(k):
            lo, hi = int(s * stride), max(int((s + 1) * stride), int(s * stride) + 1)
            picks.append(ranked[int(rng.integers(lo, min(hi, len(ranked))))])
    else:
        raise ValueError(f"unknown placement {placement!r}")
    for nid in picks:
        graph.nodes[nid].trusted = True
    if visit_edges > 0:
        wd = np.array([max(graph.weighted_degree(h), 1e-12) for h in honest])
        p = wd / wd.sum()
        for nid in picks:
            for visitor_idx in rng.choice(len(honest), size=visit_edges, p=p):
                visitor = honest[int(visitor_idx)]
                if visitor != nid:
                    graph.record_collocation(nid, visitor, weight=1)
    return sorted(picks)


# ----- file format -----------------------------------------------------------


def save_graph(graph: ProximityGraph, path: Path) -> None:
    """Plain-text node manifest plus edge list; loads back identically."""
    with open(path, "w") as fh:
        fh.write("# nodes\n")
        for nid in sorted(graph.nodes):
            node = graph.nodes[nid]
            fh.write(f"{nid} {node.kind.value} {int(node.trusted)}\n")
        fh.write("# edges\n")
        for (u, v) in sorted(graph.edges):
            fh.write(f"{u} {v} {graph.edges[(u, v)]}\n")


def load_graph(path: Path) -> ProximityGraph:
    graph = ProximityGraph()
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                section = line[1:].strip()
                continue
            parts = line.split()
            if section == "nodes":
                nid, kind, trusted = parts
                graph.add_node(nid, NodeKind(kind), trusted=bool(int(trusted)))
            elif section == "edges":
                u, v, w = parts
                graph.record_collocation(u, v, weight=int(w))
            else:
                raise ValueError(f"line outside a section: {line!r}")
    return graph

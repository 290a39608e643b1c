"""Sybil region construction and gateway attachment.

The attacker wires their Sybils into a scale-free inner region (a clique
would stand out), then spends real-world effort on attack edges: each
one is a physical collocation between a gateway device and a random
honest user.  Attack edges are split evenly across gateways, remainder
round-robin; repeat (gateway, victim) pairs pile up as edge weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proximity import NodeKind, PairStream, ProximityGraph, power_law_weights


@dataclass
class SybilPlan:
    sybil_count: int
    inner_avg_degree: float = 10.0
    gateway_count: int = 1
    attack_edge_total: int = 0
    attack_edge_weight: int = 1

    def __post_init__(self) -> None:
        if self.sybil_count < 1:
            raise ValueError("need at least one sybil")
        if not 1 <= self.gateway_count <= self.sybil_count:
            raise ValueError("gateway count must be between 1 and the sybil count")
        if self.sybil_count > 1 and self.inner_avg_degree > self.sybil_count - 1:
            raise ValueError(
                f"average inner degree {self.inner_avg_degree} is infeasible "
                f"for {self.sybil_count} sybils"
            )
        if self.attack_edge_total < 0 or self.attack_edge_weight < 1:
            raise ValueError("attack edge budget and weight must be nonnegative/positive")


def build_sybil_region(plan: SybilPlan, rng: np.random.Generator) -> dict[tuple[int, int], int]:
    """Scale-free inner edges over sybil indices 0..count-1.

    A weight-proportional attachment pass makes the region connected;
    the remaining encounter budget is spent on weighted pair events, so
    the mean weighted degree lands on ``inner_avg_degree`` exactly
    (up to the integer edge budget).
    """
    s = plan.sybil_count
    edges: dict[tuple[int, int], int] = {}
    if s == 1:
        return edges
    budget = int(round(s * plan.inner_avg_degree / 2.0))
    weights = power_law_weights(s, 2.0, rng)
    order = rng.permutation(s)
    placed = [int(order[0])]
    placed_w = [float(weights[order[0]])]
    for node in order[1:]:
        probs = np.array(placed_w)
        target = placed[int(rng.choice(len(placed), p=probs / probs.sum()))]
        key = (min(int(node), target), max(int(node), target))
        edges[key] = edges.get(key, 0) + 1
        placed.append(int(node))
        placed_w.append(float(weights[node]))
    remaining = budget - (s - 1)
    stream = PairStream(weights, rng)
    while remaining > 0:
        i, j = stream.next_pair()
        key = (i, j) if i < j else (j, i)
        edges[key] = edges.get(key, 0) + 1
        remaining -= 1
    return edges


def attach_gateways(
    honest_graph: ProximityGraph,
    region: dict[tuple[int, int], int],
    plan: SybilPlan,
    rng: np.random.Generator,
) -> ProximityGraph:
    """Merge the sybil region into the honest graph and spend the attack
    edge budget from randomly chosen gateways to random honest victims."""
    honest = honest_graph.ids_of_kind(NodeKind.HONEST)
    if plan.attack_edge_total > 0 and not honest:
        raise ValueError("attack edges need honest victims")
    # repeat (gateway, victim) encounters collapse into edge weight, so the
    # budget may exceed the distinct-pair capacity; distinct victims per
    # gateway stay bounded by the honest population.

    merged = ProximityGraph()
    for nid in sorted(honest_graph.nodes):
        node = honest_graph.nodes[nid]
        merged.add_node(nid, node.kind, trusted=node.trusted, gateway=node.gateway)
    gateway_indices = set(
        int(i) for i in rng.choice(plan.sybil_count, size=plan.gateway_count, replace=False)
    )
    sybil_ids = {}
    for i in range(plan.sybil_count):
        sid = f"s{i}"
        sybil_ids[i] = sid
        merged.add_node(sid, NodeKind.SYBIL, gateway=(i in gateway_indices))
    for (u, v), w in honest_graph.edges.items():
        merged.record_collocation(u, v, weight=w)
    for (i, j), w in region.items():
        merged.record_collocation(sybil_ids[i], sybil_ids[j], weight=w)

    gateways = sorted(gateway_indices)
    base, remainder = divmod(plan.attack_edge_total, plan.gateway_count)
    for k, gw in enumerate(gateways):
        edges_here = base + (1 if k < remainder else 0)
        if edges_here == 0:
            continue
        victims = rng.integers(0, len(honest), size=edges_here)
        accounts, hits = np.unique(victims, return_counts=True)
        for victim_idx, times in zip(accounts, hits):
            merged.record_collocation(
                sybil_ids[gw],
                honest[int(victim_idx)],
                weight=int(times) * plan.attack_edge_weight,
            )
    return merged


def build_attack_graph(
    honest_graph: ProximityGraph, plan: SybilPlan, rng: np.random.Generator
) -> ProximityGraph:
    region = build_sybil_region(plan, rng)
    return attach_gateways(honest_graph, region, plan, rng)

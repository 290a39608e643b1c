"""Server-side traffic inference and travel-time routing.

The speed shown for a road is not the plain average of the reporting
cars.  It is a weighted average biased toward the majority cohort:

    aggregate = (S_max * max(Ns, Nf) + S_avg * min(Ns, Nf)) / (Ns + Nf)

where S_avg is the count-weighted mean of all samples and S_max is the
speed of the larger cohort (ties go to the slower cohort, which favors
congestion detection; set ``tie_break_fast`` to flip).  A road becomes a
congestion hotspot when its aggregate drops below the class threshold
(40 / 20 / 15 mph); the hotspot clears only after the aggregate has been
back to normal for a dismissal delay, and an unrefreshed hotspot
persists until a long TTL runs out.
"""

from __future__ import annotations

import csv
import heapq
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .world import GpsReport, RoadClass, RoadNetwork

CONGESTION_THRESHOLDS = {
    RoadClass.HIGHWAY: 40.0,
    RoadClass.LOCAL: 20.0,
    RoadClass.RESIDENTIAL: 15.0,
}

AGGREGATION_WINDOW_S = 120.0
DISMISSAL_DELAY_S = 180.0
PERSISTENCE_TTL_S = 1800.0

# effective speed floor so a zero-speed hotspot keeps travel times finite
MIN_EFFECTIVE_SPEED_MPH = 1e-3


def congestion_threshold(road_class: RoadClass) -> float:
    return CONGESTION_THRESHOLDS[road_class]


@dataclass(frozen=True)
class SpeedCohorts:
    n_slow: int
    s_slow: float
    n_fast: int
    s_fast: float

    def __post_init__(self) -> None:
        if self.n_slow < 0 or self.n_fast < 0:
            raise ValueError("cohort counts must be nonnegative")
        if self.n_slow + self.n_fast < 1:
            raise ValueError("at least one cohort must be populated")
        if self.n_slow and self.n_fast and self.s_slow > self.s_fast:
            raise ValueError("slow cohort must not be faster than fast cohort")


def aggregate_speed(cohorts: SpeedCohorts, tie_break_fast: bool = False) -> float:
    """Majority-weighted aggregate of two speed cohorts, in mph."""
    ns, nf = cohorts.n_slow, cohorts.n_fast
    total = ns + nf
    if total < 1:
        raise ValueError("cannot aggregate empty cohorts")
    s_avg = (cohorts.s_slow * ns + cohorts.s_fast * nf) / total
    if ns > nf:
        s_max = cohorts.s_slow
    elif nf > ns:
        s_max = cohorts.s_fast
    else:
        s_max = cohorts.s_fast if tie_break_fast else cohorts.s_slow
    return (s_max * max(ns, nf) + s_avg * min(ns, nf)) / total


def partition_cohorts(
    samples: list[float],
    threshold_mph: float,
    mode: str = "threshold",
) -> SpeedCohorts:
    """Split window samples into slow/fast cohorts.

    ``threshold`` mode splits at the congestion threshold.  ``midpoint``
    mode splits halfway between the slowest and fastest sample, for
    scripted scenarios whose fast cohort sits below the class threshold.
    """
    if not samples:
        raise ValueError("cannot partition an empty sample list")
    if mode == "threshold":
        split = threshold_mph
    elif mode == "midpoint":
        split = 0.5 * (min(samples) + max(samples))
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    slow = [s for s in samples if s < split]
    fast = [s for s in samples if s >= split]
    s_slow = sum(slow) / len(slow) if slow else None
    s_fast = sum(fast) / len(fast) if fast else None
    if s_slow is None:
        s_slow = s_fast
    if s_fast is None:
        s_fast = s_slow
    return SpeedCohorts(n_slow=len(slow), s_slow=s_slow, n_fast=len(fast), s_fast=s_fast)


@dataclass
class SegmentTrafficState:
    segment_id: str
    aggregate_speed: Optional[float] = None
    hotspot: bool = False
    hotspot_since: Optional[float] = None
    normal_since: Optional[float] = None
    last_sample_at: Optional[float] = None


def update_hotspot(
    state: SegmentTrafficState,
    aggregate: Optional[float],
    road_class: RoadClass,
    now: float,
    dismissal_delay_s: float = DISMISSAL_DELAY_S,
    persistence_ttl_s: float = PERSISTENCE_TTL_S,
) -> SegmentTrafficState:
    """Advance one segment's hotspot state given the current aggregate.

    ``aggregate`` is None when the window holds no fresh samples; an
    existing hotspot then persists until the persistence TTL elapses.
    Once the aggregate has normalized, the dismissal countdown keeps
    running through sample gaps.
    """
    threshold = congestion_threshold(road_class)
    if aggregate is None:
        if state.hotspot:
            if state.normal_since is not None and now - state.normal_since >= dismissal_delay_s:
                state.hotspot = False
                state.hotspot_since = None
                state.normal_since = None
            elif state.last_sample_at is not None and now - state.last_sample_at > persistence_ttl_s:
                state.hotspot = False
                state.hotspot_since = None
                state.normal_since = None
        return state

    state.aggregate_speed = aggregate
    state.last_sample_at = now
    if aggregate < threshold:
        if not state.hotspot:
            state.hotspot = True
            state.hotspot_since = now
        state.normal_since = None
    else:
        if state.hotspot:
            if state.normal_since is None:
                state.normal_since = now
            if now - state.normal_since >= dismissal_delay_s:
                state.hotspot = False
                state.hotspot_since = None
                state.normal_since = None
    return state


class TrafficEngine:
    """Sliding-window aggregation over GPS samples, per segment."""

    def __init__(
        self,
        network: RoadNetwork,
        window_s: float = AGGREGATION_WINDOW_S,
        partition_mode: str = "threshold",
        dismissal_delay_s: float = DISMISSAL_DELAY_S,
        persistence_ttl_s: float = PERSISTENCE_TTL_S,
    ):
        self.network = network
        self.window_s = window_s
        self.partition_mode = partition_mode
        self.dismissal_delay_s = dismissal_delay_s
        self.persistence_ttl_s = persistence_ttl_s
        self.states: dict[str, SegmentTrafficState] = {}
        self._windows: dict[str, deque[tuple[float, float]]] = {}

    def ingest(self, reports: Iterable[GpsReport]) -> None:
        for r in reports:
            if r.segment_id is None:
                continue  # parked app users do not feed traffic inference
            self._windows.setdefault(r.segment_id, deque()).append((r.timestamp, r.speed_mph))

    def tick(self, now: float) -> dict[str, SegmentTrafficState]:
        """Re-aggregate every known segment at time ``now``."""
        for segment_id, window in self._windows.items():
            while window and window[0][0] <= now - self.window_s:
                window.popleft()
            state = self.states.setdefault(segment_id, SegmentTrafficState(segment_id))
            road_class = self.network.segments[segment_id].road_class
            samples = [speed for _, speed in window]
            aggregate = None
            if samples:
                cohorts = partition_cohorts(
                    samples, congestion_threshold(road_class), self.partition_mode
                )
                aggregate = aggregate_speed(cohorts)
            update_hotspot(
                state, aggregate, road_class, now,
                dismissal_delay_s=self.dismissal_delay_s,
                persistence_ttl_s=self.persistence_ttl_s,
            )
        return self.states

    def effective_speed(self, segment_id: str) -> float:
        seg = self.network.segments[segment_id]
        state = self.states.get(segment_id)
        if state is not None and state.hotspot and state.aggregate_speed is not None:
            return max(state.aggregate_speed, MIN_EFFECTIVE_SPEED_MPH)
        return seg.speed_limit


SEGMENT_STATE_COLUMNS = ["time_s", "segment_id", "aggregate_mph", "hotspot_flag"]


class SegmentStateLog:
    """Per-tick CSV log of segment traffic state."""

    def __init__(self) -> None:
        self.rows: list[tuple[float, str, Optional[float], bool]] = []

    def record(self, now: float, states: dict[str, SegmentTrafficState]) -> None:
        for segment_id in sorted(states):
            st = states[segment_id]
            self.rows.append((now, segment_id, st.aggregate_speed, st.hotspot))

    def write(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SEGMENT_STATE_COLUMNS)
            for now, segment_id, aggregate, hotspot in self.rows:
                writer.writerow(
                    [f"{now:.1f}", segment_id,
                     "" if aggregate is None else f"{aggregate:.6f}",
                     int(hotspot)]
                )


# ----- routing --------------------------------------------------------------


def segment_travel_time_s(network: RoadNetwork, segment_id: str, traffic: Optional[TrafficEngine]) -> float:
    seg = network.segments[segment_id]
    speed = traffic.effective_speed(segment_id) if traffic is not None else seg.speed_limit
    return seg.length_mi / max(speed, MIN_EFFECTIVE_SPEED_MPH) * 3600.0


def plan_route(
    network: RoadNetwork,
    origin: str,
    dest: str,
    traffic: Optional[TrafficEngine] = None,
) -> tuple[list[str], float]:
    """Minimal travel-time route between junctions.

    Ties break on the lexicographic sequence of segment ids, so equal-cost
    alternatives resolve identically on every run.
    """
    if origin not in network.junctions or dest not in network.junctions:
        raise ValueError("origin and destination must be junctions in the network")
    if origin == dest:
        return [], 0.0
    best: dict[str, tuple[float, tuple[str, ...]]] = {origin: (0.0, ())}
    heap: list[tuple[float, tuple[str, ...], str]] = [(0.0, (), origin)]
    while heap:
        eta, path, junction = heapq.heappop(heap)
        if junction == dest:
            return list(path), eta
        entry = best.get(junction)
        if entry is not None and (eta, path) > entry:
            continue
        for segment_id, far in network.neighbors(junction):
            cand = (eta + segment_travel_time_s(network, segment_id, traffic), path + (segment_id,))
            existing = best.get(far)
            if existing is None or cand < existing:
                best[far] = cand
                heapq.heappush(heap, (cand[0], cand[1], far))
    raise ValueError(f"no route from {origin} to {dest}")


def route_eta_s(
    network: RoadNetwork,
    route: list[str],
    traffic: Optional[TrafficEngine],
    first_segment_remaining_mi: Optional[float] = None,
) -> float:
    eta = 0.0
    for i, segment_id in enumerate(route):
        t = segment_travel_time_s(network, segment_id, traffic)
        if i == 0 and first_segment_remaining_mi is not None:
            seg = network.segments[segment_id]
            t *= min(max(first_segment_remaining_mi / seg.length_mi, 0.0), 1.0)
        eta += t
    return eta


def maybe_reroute(
    network: RoadNetwork,
    current_route: list[str],
    route_index: int,
    offset_mi: float,
    heading_junction: str,
    dest: str,
    traffic: Optional[TrafficEngine],
) -> tuple[list[str], float]:
    """Keep or replace the remaining route; switch only when strictly faster.

    The vehicle sits ``offset_mi`` into ``current_route[route_index]``,
    moving toward ``heading_junction``.  It must finish its current
    segment either way; alternatives are considered from that junction.
    """
    seg = network.segments[current_route[route_index]]
    remaining_here = max(seg.length_mi - offset_mi, 0.0)
    incumbent_tail = current_route[route_index:]
    incumbent_eta = route_eta_s(
        network, incumbent_tail, traffic, first_segment_remaining_mi=remaining_here
    )
    head_eta = route_eta_s(
        network, incumbent_tail[:1], traffic, first_segment_remaining_mi=remaining_here
    )
    if heading_junction == dest:
        return incumbent_tail, incumbent_eta
    alt_route, alt_eta = plan_route(network, heading_junction, dest, traffic)
    if head_eta + alt_eta < incumbent_eta:
        return [current_route[route_index]] + alt_route, head_eta + alt_eta
    return incumbent_tail, incumbent_eta

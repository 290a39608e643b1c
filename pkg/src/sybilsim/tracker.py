"""Real-time individual tracking through the downsampled query API.

The attack bootstraps the target's persistent identifier (the
seconds-precision account creation time), then keeps a rectangular
search area centered on the predicted target position and fans a fleet
of query agents across all servers, round after round, until each fresh
GPS report of the target is captured.  The tracker never touches world
state: it only reads the query surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .query import SearchArea, ServerCluster, UserRecord
from .units import DEFAULT_ORIGIN, latlon_to_xy, meters_to_miles, xy_to_latlon
from .world import FOREGROUND_CADENCE_S

ROUND_INTERVAL_S = 2.0
CENTER_QUANTUM_MI = 0.25  # predicted centers snap to this grid (keeps view reuse cheap)


class BootstrapError(RuntimeError):
    def __init__(self, message: str, candidates: Optional[list[int]] = None):
        super().__init__(message)
        self.candidates = candidates or []


@dataclass
class TrackConfig:
    area_width_mi: float = 6.0
    area_height_mi: float = 8.0
    query_agents: int = 20
    max_target_speed_mph: float = 160.0
    query_budget_per_round: int = 300
    round_interval_s: float = ROUND_INTERVAL_S
    cadence_s: float = FOREGROUND_CADENCE_S

    def __post_init__(self) -> None:
        reach_mi = self.max_target_speed_mph * self.cadence_s / 3600.0
        if reach_mi > max(self.area_width_mi, self.area_height_mi):
            raise ValueError(
                "search area too small: a target at "
                f"{self.max_target_speed_mph} mph can cross {reach_mi:.1f} mi "
                "between reports"
            )


@dataclass
class Capture:
    gps: tuple[float, float]
    gps_timestamp: float
    captured_at: float

    @property
    def delay_s(self) -> float:
        return self.captured_at - self.gps_timestamp


@dataclass
class TrackTrace:
    target_id: int
    captured: list[Capture] = field(default_factory=list)
    missed: int = 0
    followed_to_destination: bool = False

    @property
    def avg_delay_s(self) -> float:
        if not self.captured:
            return float("nan")
        return sum(c.delay_s for c in self.captured) / len(self.captured)


def bootstrap_target(
    cluster: ServerCluster,
    location: tuple[float, float],
    time_window: tuple[float, float],
    now: float,
    rng: np.random.Generator,
    radius_m: float = 100.0,
    queries_per_server: int = 8,
) -> int:
    """Resolve the persistent id of the one user seen at a known place and
    time.  Zero or multiple matches raise ``BootstrapError``."""
    radius_mi = meters_to_miles(radius_m)
    area = SearchArea.from_center_miles(location, 2 * radius_mi + 0.1, 2 * radius_mi + 0.1)
    merged = cluster.merge_server_views(area, now, rng, queries_per_server=queries_per_server)
    loc_xy = latlon_to_xy(*location)
    t0, t1 = time_window
    matches = []
    for account, rec in sorted(merged.items()):
        if not t0 <= rec.gps_timestamp <= t1:
            continue
        x, y = latlon_to_xy(*rec.gps)
        if math.hypot(x - loc_xy[0], y - loc_xy[1]) <= radius_mi:
            matches.append(account)
    if not matches:
        raise BootstrapError("no visible user matches the bootstrap location/time")
    if len(matches) > 1:
        raise BootstrapError(
            f"{len(matches)} users match the bootstrap location/time", candidates=matches
        )
    return matches[0]


class Tracker:
    """Stepped co-simulation actor that follows one target id."""

    def __init__(
        self,
        cluster: ServerCluster,
        target_id: int,
        config: TrackConfig,
        start_time: float,
        initial_position: tuple[float, float],  # (lat, lon)
        origin: tuple[float, float] = DEFAULT_ORIGIN,
    ):
        self.cluster = cluster
        self.target_id = target_id
        self.config = config
        self.origin = origin
        self.captures: list[Capture] = []
        self.lost = False
        self.lost_at: Optional[float] = None
        self.rounds_issued = 0
        self._next_round_at = start_time
        self._rounds_since_capture = 0
        self._anchor_xy = latlon_to_xy(*initial_position, origin)
        self._anchor_ts = start_time
        self._velocity_mi_s = (0.0, 0.0)
        self._last_seen_ts = -math.inf

    # ----- area prediction --------------------------------------------------

    def _predicted_center(self, now: float) -> tuple[float, float]:
        dt = max(now - self._anchor_ts, 0.0)
        vx, vy = self._velocity_mi_s
        step = math.hypot(vx, vy) * dt
        limit = self.config.max_target_speed_mph * dt / 3600.0
        scale = 1.0 if step <= limit or step == 0.0 else limit / step
        cx = self._anchor_xy[0] + vx * dt * scale
        cy = self._anchor_xy[1] + vy * dt * scale
        q = CENTER_QUANTUM_MI
        return (round(cx / q) * q, round(cy / q) * q)

    def current_area(self, now: float) -> SearchArea:
        center = xy_to_latlon(*self._predicted_center(now), self.origin)
        return SearchArea.from_center_miles(
            center, self.config.area_width_mi, self.config.area_height_mi
        )

    # ----- stepping -----------------------------------------------------------

    def on_tick(self, now: float, rng: np.random.Generator) -> list[Capture]:
        """Issue any query rounds due by ``now``; return new captures."""
        new: list[Capture] = []
        while not self.lost and self._next_round_at <= now:
            new.extend(self._run_round(self._next_round_at, rng))
            self._next_round_at += self.config.round_interval_s
        return new

    def _run_round(self, now: float, rng: np.random.Generator) -> list[Capture]:
        area = self.current_area(now)
        sightings: dict[float, UserRecord] = {}
        for agent in range(self.config.query_agents):
            server = agent % self.cluster.server_count
            for rec in self.cluster.query(server, area, now, rng):
                if rec.account_creation_time != self.target_id:
                    continue
                if rec.gps_timestamp > now:
                    continue  # caller batched ahead; a later round will see it
                if rec.gps_timestamp > self._last_seen_ts:
                    sightings.setdefault(rec.gps_timestamp, rec)
        self.rounds_issued += 1
        if not sightings:
            self._rounds_since_capture += 1
            if self._rounds_since_capture >= self.config.query_budget_per_round:
                if not self.lost:
                    self.lost = True
                    self.lost_at = now
            return []
        self._rounds_since_capture = 0
        new: list[Capture] = []
        for ts in sorted(sightings):
            rec = sightings[ts]
            capture = Capture(gps=rec.gps, gps_timestamp=ts, captured_at=now)
            self.captures.append(capture)
            new.append(capture)
            self._update_prediction(rec)
        self._last_seen_ts = max(sightings)
        return new

    def _update_prediction(self, rec: UserRecord) -> None:
        xy = latlon_to_xy(*rec.gps, self.origin)
        dt = rec.gps_timestamp - self._anchor_ts
        if self.captures and dt > 0 and len(self.captures) >= 2:
            prev = self.captures[-2]
            span = rec.gps_timestamp - prev.gps_timestamp
            if span > 0:
                pxy = latlon_to_xy(*prev.gps, self.origin)
                self._velocity_mi_s = ((xy[0] - pxy[0]) / span, (xy[1] - pxy[1]) / span)
        self._anchor_xy = xy
        self._anchor_ts = rec.gps_timestamp


def assemble_trace(
    tracker: Tracker,
    target_id: int,
    emitted_timestamps: list[float],
    trip_end_ts: Optional[float] = None,
) -> TrackTrace:
    """Reconcile tracker captures against the target's true emission log.

    ``followed_to_destination`` holds when the tracker kept area lock for
    the whole trip (losing lock after the final report is irrelevant) and
    saw the target near the end (final or next-to-final report captured).
    A target that stops reporting before ``trip_end_ts`` was not followed
    to any destination.
    """
    captured_ts = {c.gps_timestamp for c in tracker.captures}
    emitted = sorted(emitted_timestamps)
    missed = sum(1 for ts in emitted if ts not in captured_ts)
    tail = emitted[-2:]
    lost_mid_route = tracker.lost and bool(emitted) and (
        tracker.lost_at is not None and tracker.lost_at <= emitted[-1]
    )
    vanished_early = (
        trip_end_ts is not None and bool(emitted) and emitted[-1] < trip_end_ts - 1e-6
    )
    followed = (
        not lost_mid_route
        and not vanished_early
        and bool(tail)
        and any(ts in captured_ts for ts in tail)
    )
    return TrackTrace(
        target_id=target_id,
        captured=list(tracker.captures),
        missed=missed,
        followed_to_destination=followed,
    )

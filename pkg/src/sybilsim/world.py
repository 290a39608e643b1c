"""Discrete-time world model: road network, vehicle motion, GPS reports,
and the crowdsourced event lifecycle.

The world advances in fixed ticks.  Honest vehicles move continuously
along their routes; ghost riders may loop (teleporting back to the route
start) and forge whatever their script dictates.  Every agent with an
open app emits a GPS report whenever its cadence timer elapses: every
120 s in the foreground, every 300 s in the background.

Positions are carried internally as (segment id, offset in miles), or as
a fixed parked coordinate for stationary app users who are not driving.
They are converted to lat/lon only when a report is materialized.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .units import DEFAULT_ORIGIN, MPH_TO_MI_PER_S, meters_to_miles, xy_to_latlon

FOREGROUND_CADENCE_S = 120.0
BACKGROUND_CADENCE_S = 300.0
EVENT_TTL_S = 1800.0
EVENT_MERGE_RADIUS_M = 50.0
NOT_THERE_LIMIT = 2


class RoadClass(Enum):
    HIGHWAY = "highway"
    LOCAL = "local"
    RESIDENTIAL = "residential"

    @property
    def default_speed_limit(self) -> float:
        return _SPEED_LIMITS[self]


_SPEED_LIMITS = {
    RoadClass.HIGHWAY: 65.0,
    RoadClass.LOCAL: 45.0,
    RoadClass.RESIDENTIAL: 25.0,
}


class AgentKind(Enum):
    HONEST = "honest"
    GHOST_RIDER = "ghost_rider"


class AppState(Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"

    @property
    def cadence_s(self) -> float:
        return FOREGROUND_CADENCE_S if self is AppState.FOREGROUND else BACKGROUND_CADENCE_S


class EventType(Enum):
    ACCIDENT = "accident"
    POLICE = "police"
    HAZARD = "hazard"
    ROAD_CLOSURE = "road_closure"


class Vote(Enum):
    THANKS = "thanks"
    NOT_THERE = "not_there"


@dataclass(frozen=True)
class RoadSegment:
    id: str
    road_class: RoadClass
    length_mi: float
    endpoints: tuple[str, str]
    speed_limit: float = 0.0  # 0 means "use the class default"

    def __post_init__(self) -> None:
        if self.length_mi <= 0:
            raise ValueError(f"segment {self.id}: length must be positive")
        if self.speed_limit == 0.0:
            object.__setattr__(self, "speed_limit", self.road_class.default_speed_limit)
        if self.speed_limit <= 0:
            raise ValueError(f"segment {self.id}: speed limit must be positive")


class RoadNetwork:
    """Typed road graph.  Junctions carry local (x, y) coordinates in miles."""

    def __init__(
        self,
        segments: Iterable[RoadSegment],
        junctions: dict[str, tuple[float, float]],
        origin: tuple[float, float] = DEFAULT_ORIGIN,
    ):
        self.segments: dict[str, RoadSegment] = {}
        self.junctions = dict(junctions)
        self.origin = origin
        self._adjacency: dict[str, list[tuple[str, str]]] = {j: [] for j in self.junctions}
        for seg in segments:
            if seg.id in self.segments:
                raise ValueError(f"duplicate segment id {seg.id}")
            a, b = seg.endpoints
            for j in (a, b):
                if j not in self.junctions:
                    raise ValueError(f"segment {seg.id} references unknown junction {j}")
            self.segments[seg.id] = seg
            self._adjacency[a].append((seg.id, b))
            self._adjacency[b].append((seg.id, a))
        for j in self._adjacency:
            self._adjacency[j].sort()

    def neighbors(self, junction: str) -> list[tuple[str, str]]:
        """(segment id, far junction) pairs leaving a junction, in id order."""
        return self._adjacency[junction]

    def segment_xy(self, segment_id: str, offset_mi: float) -> tuple[float, float]:
        seg = self.segments[segment_id]
        (x1, y1) = self.junctions[seg.endpoints[0]]
        (x2, y2) = self.junctions[seg.endpoints[1]]
        f = min(max(offset_mi / seg.length_mi, 0.0), 1.0)
        return (x1 + f * (x2 - x1), y1 + f * (y2 - y1))

    def position_xy(self, position: "Position") -> tuple[float, float]:
        if position.segment_id is None:
            return (position.x_mi, position.y_mi)
        return self.segment_xy(position.segment_id, position.offset_mi)

    def position_latlon(self, position: "Position") -> tuple[float, float]:
        x, y = self.position_xy(position)
        return xy_to_latlon(x, y, self.origin)

    def distance_mi(self, a: "Position", b: "Position") -> float:
        ax, ay = self.position_xy(a)
        bx, by = self.position_xy(b)
        return math.hypot(ax - bx, ay - by)

    def is_connected(self) -> bool:
        if not self.junctions:
            return True
        seen = set()
        stack = [next(iter(self.junctions))]
        while stack:
            j = stack.pop()
            if j in seen:
                continue
            seen.add(j)
            stack.extend(far for _, far in self._adjacency[j])
        return len(seen) == len(self.junctions)


@dataclass(frozen=True)
class Position:
    """On-road (segment + offset) or parked (raw x/y miles) location."""

    segment_id: Optional[str] = None
    offset_mi: float = 0.0
    x_mi: float = 0.0
    y_mi: float = 0.0

    @staticmethod
    def on_segment(segment_id: str, offset_mi: float) -> "Position":
        return Position(segment_id=segment_id, offset_mi=offset_mi)

    @staticmethod
    def parked(x_mi: float, y_mi: float) -> "Position":
        return Position(segment_id=None, x_mi=x_mi, y_mi=y_mi)


class SpeedScript:
    """Piecewise-constant speed (mph) over time since the agent departed."""

    def __init__(self, steps: float | list[tuple[float, float]]):
        if isinstance(steps, (int, float)):
            steps = [(0.0, float(steps))]
        if not steps or steps[0][0] > 0.0:
            raise ValueError("speed script must start at t=0")
        self.steps = sorted((float(t), float(v)) for t, v in steps)

    def speed_at(self, t: float) -> float:
        speed = self.steps[0][1]
        for start, v in self.steps:
            if t >= start:
                speed = v
            else:
                break
        return speed

    def distance_between(self, t0: float, t1: float) -> float:
        """Miles covered between route-times t0 and t1 (exact integration)."""
        if t1 <= t0:
            return 0.0
        bounds = [t0] + [t for t, _ in self.steps if t0 < t < t1] + [t1]
        return sum(
            self.speed_at(a) * (b - a) * MPH_TO_MI_PER_S
            for a, b in zip(bounds, bounds[1:])
        )


@dataclass
class VehicleAgent:
    id: str
    kind: AgentKind
    route: list[str] = field(default_factory=list)
    speed_script: SpeedScript = field(default_factory=lambda: SpeedScript(0.0))
    app_state: AppState = AppState.FOREGROUND
    visible: bool = True
    account_creation_time: int = 0
    session_id: str = ""
    start_time: float = 0.0
    report_phase_s: float = 0.0
    parked_at: Optional[tuple[float, float]] = None
    loop: bool = False  # ghost riders only: restart route on arrival
    report_on_arrival: bool = False

    # runtime state
    distance_mi: float = field(default=0.0, repr=False)
    arrived: bool = field(default=False, repr=False)
    app_open: bool = field(default=True, repr=False)
    _session_counter: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if self.loop and self.kind is not AgentKind.GHOST_RIDER:
            raise ValueError(f"agent {self.id}: only ghost riders may loop")
        if not self.session_id:
            self.new_session()

    def new_session(self) -> str:
        self._session_counter += 1
        self.session_id = f"{self.id}-s{self._session_counter}"
        return self.session_id

    def close_app(self) -> None:
        self.app_open = False

    def open_app(self) -> None:
        """Reopen the app: new session, and visibility resets to on."""
        self.app_open = True
        self.visible = True
        self.new_session()


@dataclass(frozen=True)
class GpsReport:
    vehicle_id: str
    kind: AgentKind
    segment_id: Optional[str]
    offset_mi: float
    lat: float
    lon: float
    speed_mph: float
    timestamp: float
    account_creation_time: int
    session_id: str
    visible: bool


@dataclass
class MapEvent:
    id: str
    event_type: EventType
    location: Position
    created_at: float
    last_refreshed: float
    thanks_count: int = 0
    not_there_streak: int = 0
    alive: bool = True


class World:
    """Single-threaded world owning the road network, agents, and events."""

    def __init__(
        self,
        network: RoadNetwork,
        agents: Iterable[VehicleAgent] = (),
        event_ttl_s: float = EVENT_TTL_S,
        merge_radius_m: float = EVENT_MERGE_RADIUS_M,
    ):
        self.network = network
        self.agents: dict[str, VehicleAgent] = {}
        self.events: dict[str, MapEvent] = {}
        self.clock = 0.0
        self.event_ttl_s = event_ttl_s
        self.merge_radius_mi = meters_to_miles(merge_radius_m)
        self._event_seq = 0
        self._route_lengths: dict[str, list[float]] = {}
        seen_accounts: set[int] = set()
        for agent in agents:
            if agent.id in self.agents:
                raise ValueError(f"duplicate agent id {agent.id}")
            if agent.account_creation_time in seen_accounts:
                raise ValueError(
                    f"agent {agent.id}: account creation time "
                    f"{agent.account_creation_time} is not unique"
                )
            seen_accounts.add(agent.account_creation_time)
            for seg in agent.route:
                if seg not in network.segments:
                    raise ValueError(f"agent {agent.id}: unknown segment {seg}")
            self.agents[agent.id] = agent

    # ----- motion ---------------------------------------------------------

    def _route_cumlen(self, agent: VehicleAgent) -> list[float]:
        cum = self._route_lengths.get(agent.id)
        if cum is None:
            cum = [0.0]
            for seg in agent.route:
                cum.append(cum[-1] + self.network.segments[seg].length_mi)
            self._route_lengths[agent.id] = cum
        return cum

    def route_length_mi(self, agent: VehicleAgent) -> float:
        return self._route_cumlen(agent)[-1]

    def agent_position(self, agent: VehicleAgent, at_distance: Optional[float] = None) -> Position:
        if not agent.route:
            if agent.parked_at is None:
                raise ValueError(f"agent {agent.id} has neither a route nor a parked position")
            return Position.parked(*agent.parked_at)
        cum = self._route_cumlen(agent)
        total = cum[-1]
        d = agent.distance_mi if at_distance is None else at_distance
        if agent.loop and total > 0:
            d = d % total
        d = min(max(d, 0.0), total)
        for i, seg in enumerate(agent.route):
            if d <= cum[i + 1] or i == len(agent.route) - 1:
                return Position.on_segment(seg, d - cum[i])
        return Position.on_segment(agent.route[-1], self.network.segments[agent.route[-1]].length_mi)

    def _distance_at(self, agent: VehicleAgent, t: float) -> float:
        """Route distance at absolute time t (t >= agent.start_time)."""
        return agent.speed_script.distance_between(0.0, t - agent.start_time)

    # ----- stepping -------------------------------------------------------

    def advance(self, dt: float) -> list[GpsReport]:
        """Advance the world by dt seconds and return GPS reports emitted.

        Reports are timestamped at the exact cadence instants falling
        inside the tick; positions are interpolated to those instants, so
        the emitted stream is independent of how the interval is split
        into ticks.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        t0 = self.clock
        t1 = t0 + dt
        reports: list[GpsReport] = []
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            if t1 <= agent.start_time:
                continue
            reports.extend(self._advance_agent(agent, t0, t1))
        self.clock = t1
        reports.sort(key=lambda r: (r.timestamp, r.vehicle_id))
        return reports

    def _advance_agent(self, agent: VehicleAgent, t0: float, t1: float) -> list[GpsReport]:
        out: list[GpsReport] = []
        cadence = agent.app_state.cadence_s
        total = self.route_length_mi(agent) if agent.route else 0.0

        arrival_time: Optional[float] = None
        if agent.route and not agent.loop and not agent.arrived:
            # solve for the instant the route completes, if inside this tick
            new_dist = self._distance_at(agent, t1)
            if new_dist >= total:
                lo, hi = max(t0, agent.start_time), t1
                for _ in range(60):  # bisection to sub-microsecond
                    mid = 0.5 * (lo + hi)
                    if self._distance_at(agent, mid) >= total:
                        hi = mid
                    else:
                        lo = mid
                arrival_time = hi

        # cadence instants inside (t0, t1]
        anchor = agent.start_time + agent.report_phase_s
        k = max(1, math.floor((t0 - anchor) / cadence) + 1)
        t_report = anchor + k * cadence
        while t_report <= t1 + 1e-9:
            if t_report > t0 + 1e-9:
                cutoff = arrival_time if arrival_time is not None else float("inf")
                if t_report <= cutoff + 1e-9 and agent.app_open and not agent.arrived:
                    out.append(self._emit(agent, t_report))
            t_report += cadence

        if arrival_time is not None:
            if agent.report_on_arrival and agent.app_open:
                if not out or abs(out[-1].timestamp - arrival_time) > 1e-6:
                    out.append(self._emit(agent, arrival_time))
            agent.arrived = True
            agent.distance_mi = total
        elif agent.route and not agent.arrived:
            agent.distance_mi = self._distance_at(agent, t1)
        return out

    def _emit(self, agent: VehicleAgent, t: float) -> GpsReport:
        if agent.route and not agent.arrived:
            d = self._distance_at(agent, t)
            pos = self.agent_position(agent, at_distance=d)
            speed = agent.speed_script.speed_at(t - agent.start_time)
        else:
            pos = self.agent_position(agent)
            speed = 0.0
        lat, lon = self.network.position_latlon(pos)
        return GpsReport(
            vehicle_id=agent.id,
            kind=agent.kind,
            segment_id=pos.segment_id,
            offset_mi=pos.offset_mi,
            lat=lat,
            lon=lon,
            speed_mph=speed,
            timestamp=t,
            account_creation_time=agent.account_creation_time,
            session_id=agent.session_id,
            visible=agent.visible,
        )

    # ----- events ---------------------------------------------------------

    def report_event(self, vehicle_id: str, event_type: EventType, location: Position) -> str:
        """Create an event, or refresh the matching one within the merge radius."""
        agent = self.agents.get(vehicle_id)
        if agent is None or not agent.app_open:
            raise ValueError(f"unknown or offline vehicle {vehicle_id}")
        for event in self.events.values():
            if not event.alive or event.event_type is not event_type:
                continue
            if self.network.distance_mi(event.location, location) <= self.merge_radius_mi:
                event.last_refreshed = self.clock
                return event.id
        self._event_seq += 1
        event_id = f"ev{self._event_seq}"
        self.events[event_id] = MapEvent(
            id=event_id,
            event_type=event_type,
            location=location,
            created_at=self.clock,
            last_refreshed=self.clock,
        )
        return event_id

    def vote_event(self, event_id: str, vote: Vote) -> MapEvent:
        event = self.events[event_id]
        if not event.alive:
            return event  # voting on a dead event is a no-op
        if vote is Vote.THANKS:
            event.thanks_count += 1
            event.not_there_streak = 0
        else:
            event.not_there_streak += 1
            if event.not_there_streak >= NOT_THERE_LIMIT:
                event.alive = False
        return event

    def expire_events(self, now: Optional[float] = None) -> list[str]:
        """Kill events whose last refresh is older than the TTL."""
        now = self.clock if now is None else now
        expired = []
        for event in self.events.values():
            if event.alive and now - event.last_refreshed > self.event_ttl_s:
                event.alive = False
                expired.append(event.id)
        return sorted(expired)


# ----- scenario config + GPS log ------------------------------------------

GPS_LOG_COLUMNS = ["time_s", "vehicle_id", "kind", "lat", "lon", "speed_mph"]


def write_gps_log(path: Path, reports: Iterable[GpsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GPS_LOG_COLUMNS)
        for r in reports:
            writer.writerow(
                [f"{r.timestamp:.1f}", r.vehicle_id, r.kind.value,
                 f"{r.lat:.7f}", f"{r.lon:.7f}", f"{r.speed_mph:.3f}"]
            )


def network_from_dict(data: dict) -> RoadNetwork:
    junctions = {j["id"]: (float(j["x_mi"]), float(j["y_mi"])) for j in data["junctions"]}
    segments = [
        RoadSegment(
            id=s["id"],
            road_class=RoadClass(s["road_class"]),
            length_mi=float(s["length_mi"]),
            endpoints=(s["endpoints"][0], s["endpoints"][1]),
            speed_limit=float(s.get("speed_limit", 0.0)),
        )
        for s in data["segments"]
    ]
    origin = tuple(data.get("origin", DEFAULT_ORIGIN))
    return RoadNetwork(segments, junctions, origin=origin)


def agent_from_dict(data: dict) -> VehicleAgent:
    script = data.get("speed_script", 0.0)
    if isinstance(script, list):
        script = SpeedScript([(float(t), float(v)) for t, v in script])
    else:
        script = SpeedScript(float(script))
    parked = data.get("parked_at")
    return VehicleAgent(
        id=data["id"],
        kind=AgentKind(data["kind"]),
        route=list(data.get("route", [])),
        speed_script=script,
        app_state=AppState(data.get("app_state", "foreground")),
        visible=bool(data.get("visible", True)),
        account_creation_time=int(data["account_creation_time"]),
        start_time=float(data.get("start_time", 0.0)),
        report_phase_s=float(data.get("report_phase_s", 0.0)),
        parked_at=tuple(parked) if parked is not None else None,
        loop=bool(data.get("loop", False)),
        report_on_arrival=bool(data.get("report_on_arrival", False)),
    )


def world_from_dict(data: dict) -> World:
    network = network_from_dict(data["network"])
    agents = [agent_from_dict(a) for a in data.get("agents", [])]
    return World(
        network,
        agents,
        event_ttl_s=float(data.get("event_ttl_s", EVENT_TTL_S)),
        merge_radius_m=float(data.get("merge_radius_m", EVENT_MERGE_RADIUS_M)),
    )


def world_from_file(path: Path) -> World:
    with open(path) as fh:
        return world_from_dict(json.load(fh))

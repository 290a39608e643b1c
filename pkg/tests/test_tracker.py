import numpy as np
import pytest

from sybilsim.query import ServerCluster
from sybilsim.tracker import (
    BootstrapError,
    TrackConfig,
    Tracker,
    assemble_trace,
    bootstrap_target,
)
from sybilsim.units import xy_to_latlon
from sybilsim.world import (
    AgentKind,
    RoadClass,
    RoadNetwork,
    RoadSegment,
    SpeedScript,
    VehicleAgent,
    World,
)

ORIGIN_LL = xy_to_latlon(0.0, 0.0)


def line_network(length=10.0):
    seg = RoadSegment("s0", RoadClass.HIGHWAY, length, ("a", "b"))
    return RoadNetwork([seg], {"a": (0.0, 0.0), "b": (length, 0.0)})


def run_world(world, cluster, until, tracker=None, rng=None, step=60.0, on_report=None):
    now = 0.0
    while now < until - 1e-9:
        s = min(step, until - now)
        for r in world.advance(s):
            cluster.ingest(r, now=r.timestamp)
            if on_report:
                on_report(r)
        now += s
        # tracker rounds promote the cluster to their own round times
        if tracker is not None:
            tracker.on_tick(now, rng)
        cluster.advance(now)


class TestBootstrap:
    def test_lone_user_resolves(self):
        rng = np.random.default_rng(0)
        world = World(line_network(), [
            VehicleAgent(id="v", kind=AgentKind.HONEST, route=[], parked_at=(0.0, 0.0),
                         account_creation_time=1234567),
        ])
        cluster = ServerCluster(rng)
        run_world(world, cluster, 500.0)
        target = bootstrap_target(cluster, ORIGIN_LL, (0.0, 500.0), 500.0, rng)
        assert target == 1234567

    def test_colocated_users_ambiguous(self):
        rng = np.random.default_rng(1)
        world = World(line_network(), [
            VehicleAgent(id="v1", kind=AgentKind.HONEST, route=[], parked_at=(0.0, 0.0),
                         account_creation_time=111),
            VehicleAgent(id="v2", kind=AgentKind.HONEST, route=[], parked_at=(0.01, 0.0),
                         account_creation_time=222),
        ])
        cluster = ServerCluster(rng)
        run_world(world, cluster, 500.0)
        with pytest.raises(BootstrapError) as err:
            bootstrap_target(cluster, ORIGIN_LL, (0.0, 500.0), 500.0, rng)
        assert sorted(err.value.candidates) == [111, 222]

    def test_invisible_target_untrackable(self):
        rng = np.random.default_rng(2)
        world = World(line_network(), [
            VehicleAgent(id="v", kind=AgentKind.HONEST, route=[], parked_at=(0.0, 0.0),
                         account_creation_time=999, visible=False),
        ])
        cluster = ServerCluster(rng)
        run_world(world, cluster, 500.0)
        with pytest.raises(BootstrapError):
            bootstrap_target(cluster, ORIGIN_LL, (0.0, 500.0), 500.0, rng)


class TestTrackConfig:
    def test_area_sized_for_max_speed(self):
        TrackConfig()  # 160 mph for 120 s = 5.3 mi fits the 8 mi extent
        with pytest.raises(ValueError):
            TrackConfig(area_width_mi=2.0, area_height_mi=3.0)


class TestTracking:
    def _track_run(self, rng_seed=3, speed=60.0, close_app_at=None):
        rng = np.random.default_rng(rng_seed)
        target = VehicleAgent(
            id="t", kind=AgentKind.HONEST, route=["s0"],
            speed_script=SpeedScript(speed), account_creation_time=777,
            report_on_arrival=True,
        )
        world = World(line_network(10.0), [target])
        cluster = ServerCluster(rng)
        tracker = Tracker(
            cluster, 777, TrackConfig(query_budget_per_round=60),
            start_time=2.0, initial_position=ORIGIN_LL,
        )
        emissions = []
        arrival = 10.0 / speed * 3600.0

        def note(r):
            if r.vehicle_id == "t" and r.timestamp <= arrival + 1e-6:
                emissions.append(r.timestamp)

        now = 0.0
        until = arrival + 120.0
        while now < until - 1e-9:
            s = min(30.0, until - now)
            if close_app_at is not None and now >= close_app_at:
                world.agents["t"].close_app()
            for r in world.advance(s):
                cluster.ingest(r, now=r.timestamp)
                note(r)
            now += s
            tracker.on_tick(now, rng)
            cluster.advance(now)
        return tracker, emissions

    def test_zero_density_every_report_captured_first_round(self):
        tracker, emissions = self._track_run()
        trace = assemble_trace(tracker, 777, emissions)
        assert len(emissions) == 5  # 10 mi at 60 mph: 120..600 s
        assert trace.missed == 0
        assert len(trace.captured) == 5
        assert trace.followed_to_destination
        # no competition: capture happens on the next 2 s round
        assert trace.avg_delay_s <= 2.0 + 1e-6

    def test_closed_app_loses_target(self):
        tracker, emissions = self._track_run(close_app_at=240.0)
        arrival = 10.0 / 60.0 * 3600.0
        trace = assemble_trace(tracker, 777, emissions, trip_end_ts=arrival)
        assert len(emissions) < 5  # reporting stopped with the app
        assert tracker.lost
        assert not trace.followed_to_destination

    def test_reacquisition_after_reopen(self):
        rng = np.random.default_rng(4)
        agent = VehicleAgent(id="t", kind=AgentKind.HONEST, route=[],
                             parked_at=(2.0, 0.0), account_creation_time=555)
        world = World(line_network(), [agent])
        cluster = ServerCluster(rng)
        run_world(world, cluster, 300.0)
        agent.close_app()
        run_world(world, cluster, 900.0)  # silent gap
        old_session = agent.session_id
        agent.open_app()
        world.clock = 900.0
        for r in world.advance(300.0):
            cluster.ingest(r, now=r.timestamp)
        cluster.advance(1200.0)
        assert agent.session_id != old_session
        # the persistent id still matches at the monitored spot
        spot = xy_to_latlon(2.0, 0.0)
        assert bootstrap_target(cluster, spot, (900.0, 1200.0), 1200.0, rng) == 555

    def test_tracker_reads_only(self):
        rng = np.random.default_rng(5)
        target = VehicleAgent(id="t", kind=AgentKind.HONEST, route=["s0"],
                              speed_script=SpeedScript(60.0), account_creation_time=777)
        world = World(line_network(), [target])
        cluster = ServerCluster(rng)
        tracker = Tracker(cluster, 777, TrackConfig(), start_time=2.0,
                          initial_position=ORIGIN_LL)
        run_world(world, cluster, 300.0, tracker=tracker, rng=rng)
        assert world.events == {}  # nothing injected into the world

    def test_capture_delay_counts_from_emission(self):
        tracker, emissions = self._track_run()
        for c in tracker.captures:
            assert c.captured_at >= c.gps_timestamp
            assert c.delay_s == c.captured_at - c.gps_timestamp

    def test_area_advances_with_velocity(self):
        tracker, _ = self._track_run()
        # after two captures the predictor should aim ahead of the last fix
        assert len(tracker.captures) >= 2
        last = tracker.captures[-1]
        area = tracker.current_area(last.captured_at + 60.0)
        lat, lon = last.gps
        assert area.contains(lat, lon)
        # the center has moved east of the last capture (motion along +x)
        center_lon = (area.lon_min + area.lon_max) / 2
        assert center_lon >= lon - 1e-9

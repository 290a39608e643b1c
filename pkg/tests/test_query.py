import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sybilsim.query import (
    QUERY_CAP,
    SearchArea,
    ServerCluster,
    appearance_distribution_check,
    expected_unique_users,
)
from sybilsim.world import AgentKind, GpsReport


def fake_report(account, lat=0.0, lon=0.0, ts=0.0, visible=True, vid=None):
    return GpsReport(
        vehicle_id=vid or f"u{account}", kind=AgentKind.HONEST, segment_id=None,
        offset_mi=0.0, lat=lat, lon=lon, speed_mph=0.0, timestamp=ts,
        account_creation_time=account, session_id=f"sess{account}", visible=visible,
    )


def populate(cluster, count, area_side_deg=0.05, ts=0.0, rng=None):
    rng = rng or np.random.default_rng(0)
    for i in range(count):
        lat = rng.uniform(-area_side_deg, area_side_deg)
        lon = rng.uniform(-area_side_deg, area_side_deg)
        cluster.ingest(fake_report(i, lat, lon, ts), now=ts)
    cluster.advance(ts + 301.0)


AREA = SearchArea(-0.1, -0.1, 0.1, 0.1)


class TestSearchArea:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            SearchArea(0.0, 0.0, 0.0, 1.0)

    def test_from_center_miles(self):
        area = SearchArea.from_center_miles((0.0, 0.0), 6.0, 8.0)
        assert area.lat_max - area.lat_min == pytest.approx(8.0 / 69.0)
        assert area.lon_max - area.lon_min == pytest.approx(6.0 / 69.0)

    def test_closed_bounds(self):
        area = SearchArea(0.0, 0.0, 1.0, 1.0)
        assert area.contains(0.0, 0.0)
        assert area.contains(1.0, 1.0)
        assert not area.contains(1.0000001, 0.5)


class TestQuery:
    def test_below_cap_returns_all(self):
        rng = np.random.default_rng(1)
        cluster = ServerCluster(rng, server_count=1)
        populate(cluster, 15)
        recs = cluster.query(0, AREA, 400.0, rng)
        assert len(recs) == 15

    def test_above_cap_returns_20_distinct(self):
        rng = np.random.default_rng(2)
        cluster = ServerCluster(rng, server_count=1)
        populate(cluster, 100)
        recs = cluster.query(0, AREA, 400.0, rng)
        assert len(recs) == QUERY_CAP
        assert len({r.account_creation_time for r in recs}) == QUERY_CAP

    def test_never_outside_area_never_invisible(self):
        rng = np.random.default_rng(3)
        cluster = ServerCluster(rng, server_count=1)
        for i in range(50):
            lat = rng.uniform(-0.3, 0.3)
            cluster.ingest(fake_report(i, lat, 0.0, visible=(i % 3 != 0)), now=0.0)
        cluster.advance(400.0)
        for _ in range(30):
            for rec in cluster.query(0, AREA, 400.0, rng):
                assert rec.visible
                assert AREA.contains(*rec.gps)

    def test_repeated_queries_converge_to_population(self):
        rng = np.random.default_rng(4)
        cluster = ServerCluster(rng, server_count=1)
        populate(cluster, 100)
        seen = set()
        for _ in range(400):
            for rec in cluster.query(0, AREA, 400.0, rng):
                seen.add(rec.account_creation_time)
        assert len(seen) == 100

    def test_downsampling_uniform_within_3_sigma(self):
        rng = np.random.default_rng(5)
        cluster = ServerCluster(rng, server_count=1)
        populate(cluster, 100)
        n = 400
        counts = dict.fromkeys(range(100), 0)
        for _ in range(n):
            for rec in cluster.query(0, AREA, 400.0, rng):
                counts[rec.account_creation_time] += 1
        p = QUERY_CAP / 100
        sigma = (n * p * (1 - p)) ** 0.5
        # per-user counts stay near Binomial expectation; allow rare 4-sigma
        deviations = [abs(c - n * p) for c in counts.values()]
        assert np.mean(deviations) < 3 * sigma
        assert max(deviations) < 5 * sigma

    def test_fresh_report_only_on_home_server(self):
        rng = np.random.default_rng(6)
        cluster = ServerCluster(rng, server_count=2)
        report = fake_report(7, 0.0, 0.0, ts=1000.0)
        home = cluster.home_server(7)
        cluster.ingest(report, now=1000.0)
        cluster.advance(1100.0)  # younger than the minimum 120 s sync delay
        assert len(cluster.query(home, AREA, 1100.0, rng)) == 1
        assert len(cluster.query(1 - home, AREA, 1100.0, rng)) == 0

    def test_synced_report_on_all_servers_after_300s(self):
        rng = np.random.default_rng(7)
        cluster = ServerCluster(rng, server_count=2)
        cluster.ingest(fake_report(7, 0.0, 0.0, ts=1000.0), now=1000.0)
        cluster.advance(1301.0)
        assert len(cluster.query(0, AREA, 1301.0, rng)) == 1
        assert len(cluster.query(1, AREA, 1301.0, rng)) == 1

    def test_stale_record_not_resurrected(self):
        rng = np.random.default_rng(8)
        cluster = ServerCluster(rng, server_count=1, sync_delay_range_s=(0.0, 0.0))
        cluster.ingest(fake_report(1, 0.0, 0.0, ts=100.0), now=100.0)
        cluster.ingest(fake_report(1, 0.05, 0.05, ts=200.0), now=200.0)
        cluster.advance(300.0)
        (rec,) = cluster.query(0, AREA, 300.0, rng)
        assert rec.gps_timestamp == 200.0

    def test_merge_single_server_equals_repeat_query(self):
        rng = np.random.default_rng(9)
        cluster = ServerCluster(rng, server_count=1)
        populate(cluster, 30)
        merged = cluster.merge_server_views(AREA, 400.0, rng, queries_per_server=5)
        assert set(merged) <= set(range(30))
        assert len(merged) == 30  # 5 queries x 20 over 30 users finds everyone w.h.p.

    def test_merge_keyed_by_account(self):
        rng = np.random.default_rng(10)
        cluster = ServerCluster(rng, server_count=3)
        populate(cluster, 10)
        merged = cluster.merge_server_views(AREA, 400.0, rng, queries_per_server=2)
        assert sorted(merged) == list(range(10))


class TestExpectedUnique:
    def test_zero_queries(self):
        assert expected_unique_users(100, 0) == 0.0

    def test_no_downsampling_when_small(self):
        assert expected_unique_users(20, 1) == 20.0

    def test_closed_form_value(self):
        # frozen oracle: 100 * (1 - 0.8**50)
        assert expected_unique_users(100, 50) == pytest.approx(99.9985727523073, abs=1e-9)

    def test_monte_carlo_cross_check(self):
        rng = np.random.default_rng(11)
        m, n, runs = 100, 50, 10_000
        totals = 0
        for _ in range(runs):
            seen = set()
            for _ in range(n):
                seen.update(rng.choice(m, size=QUERY_CAP, replace=False))
            totals += len(seen)
        assert totals / runs == pytest.approx(expected_unique_users(m, n), abs=0.01)

    @given(m=st.integers(1, 200), n=st.integers(0, 200))
    @settings(max_examples=100, deadline=None)
    def test_monotone_and_bounded(self, m, n):
        v1 = expected_unique_users(m, n)
        v2 = expected_unique_users(m, n + 1)
        assert 0.0 <= v1 <= m
        assert v2 >= v1 - 1e-12


class TestAppearanceDistribution:
    def test_simulator_output_passes(self):
        rng = np.random.default_rng(12)
        m, n = 100, 100
        counts = np.zeros(m, dtype=int)
        for _ in range(n):
            counts[rng.choice(m, size=QUERY_CAP, replace=False)] += 1
        assert counts.mean() == pytest.approx(n * QUERY_CAP / m)  # mean ~ 20
        _, p, passed = appearance_distribution_check(counts, m, n)
        assert passed, f"uniform sampler rejected (p={p})"

    def test_rigged_sampler_fails(self):
        rng = np.random.default_rng(13)
        m, n = 100, 100
        weights = np.exp(-np.arange(m) / 15.0)
        weights /= weights.sum()
        counts = np.zeros(m, dtype=int)
        for _ in range(n):
            counts[rng.choice(m, size=QUERY_CAP, replace=False, p=weights)] += 1
        _, p, passed = appearance_distribution_check(counts, m, n)
        assert not passed, f"biased sampler accepted (p={p})"

    def test_small_population_vacuous_pass(self):
        counts = [10] * 15
        stat, p, passed = appearance_distribution_check(counts, 15, 10)
        assert passed and p == 1.0

    def test_count_length_mismatch(self):
        with pytest.raises(ValueError):
            appearance_distribution_check([1, 2, 3], 100, 10)

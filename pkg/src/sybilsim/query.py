"""Server query surface: per-server views with sync delay, rectangular
search-area queries capped at 20 uniformly sampled users, and the
coverage statistics an attacker relies on.

Each GPS report lands on its account's home server immediately and
reaches every other server after an independent uniform sync delay.
A query returns at most ``QUERY_CAP`` visible users from one server's
view of the area; the subset is sampled uniformly, which is what makes
repeated querying recover the full population.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import stats

from .units import MILES_PER_DEG_LAT, miles_per_deg_lon
from .world import GpsReport

QUERY_CAP = 20
SYNC_DELAY_RANGE_S = (120.0, 300.0)
DEFAULT_SERVER_COUNT = 4


@dataclass(frozen=True)
class UserRecord:
    session_user_id: str
    nickname: str
    account_creation_time: int
    gps: tuple[float, float]  # (lat, lon)
    gps_timestamp: float
    visible: bool


class SearchArea:
    """Closed rectangle in lat/lon degrees."""

    def __init__(self, lat_min: float, lon_min: float, lat_max: float, lon_max: float):
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ValueError("search area must have positive extent")
        self.lat_min = lat_min
        self.lon_min = lon_min
        self.lat_max = lat_max
        self.lon_max = lon_max

    @staticmethod
    def from_center_miles(
        center: tuple[float, float], width_mi: float, height_mi: float
    ) -> "SearchArea":
        lat, lon = center
        half_h = height_mi / 2.0 / MILES_PER_DEG_LAT
        half_w = width_mi / 2.0 / miles_per_deg_lon(lat)
        return SearchArea(lat - half_h, lon - half_w, lat + half_h, lon + half_w)

    def contains(self, lat: float, lon: float) -> bool:
        return (
            self.lat_min <= lat <= self.lat_max
            and self.lon_min <= lon <= self.lon_max
        )

    def key(self) -> tuple[float, float, float, float]:
        return (
            round(self.lat_min, 9), round(self.lon_min, 9),
            round(self.lat_max, 9), round(self.lon_max, 9),
        )

    def __repr__(self) -> str:
        return (
            f"SearchArea({self.lat_min:.5f}, {self.lon_min:.5f}, "
            f"{self.lat_max:.5f}, {self.lon_max:.5f})"
        )


class _ServerView:
    """One server's latest-record-per-account view with a cell index."""

    def __init__(self, cell_deg: float):
        self.current: dict[int, UserRecord] = {}
        self.pending: list[tuple[float, int, int, UserRecord]] = []
        self._seq = 0
        self.cell_deg = cell_deg
        self.cells: dict[tuple[int, int], set[int]] = {}
        self.account_cell: dict[int, tuple[int, int]] = {}
        self.layout_version = 0  # bumped when any account moves cells or flips visibility

    def _cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        return (math.floor(lat / self.cell_deg), math.floor(lon / self.cell_deg))

    def schedule(self, visible_at: float, record: UserRecord) -> None:
        self._seq += 1
        heapq.heappush(self.pending, (visible_at, self._seq, record.account_creation_time, record))

    def promote(self, now: float) -> None:
        while self.pending and self.pending[0][0] <= now:
            _, _, account, record = heapq.heappop(self.pending)
            old = self.current.get(account)
            if old is not None and old.gps_timestamp >= record.gps_timestamp:
                continue
            self.current[account] = record
            cell = self._cell_of(*record.gps)
            old_cell = self.account_cell.get(account)
            if old_cell != cell:
                if old_cell is not None:
                    self.cells[old_cell].discard(account)
                self.cells.setdefault(cell, set()).add(account)
                self.account_cell[account] = cell
                self.layout_version += 1
            if old is not None and old.visible != record.visible:
                self.layout_version += 1

    def accounts_in_area(self, area: SearchArea) -> list[int]:
        """Sorted visible accounts whose latest record lies in the area."""
        ci_min = math.floor(area.lat_min / self.cell_deg)
        ci_max = math.floor(area.lat_max / self.cell_deg)
        cj_min = math.floor(area.lon_min / self.cell_deg)
        cj_max = math.floor(area.lon_max / self.cell_deg)
        found: list[int] = []
        for ci in range(ci_min, ci_max + 1):
            for cj in range(cj_min, cj_max + 1):
                for account in self.cells.get((ci, cj), ()):
                    rec = self.current[account]
                    if rec.visible and area.contains(*rec.gps):
                        found.append(account)
        found.sort()
        return found


class ServerCluster:
    """A set of map servers with per-report synchronization delay."""

    def __init__(
        self,
        rng: np.random.Generator,
        server_count: int = DEFAULT_SERVER_COUNT,
        sync_delay_range_s: tuple[float, float] = SYNC_DELAY_RANGE_S,
        cell_deg: float = 0.015,
    ):
        if server_count < 1:
            raise ValueError("cluster needs at least one server")
        self.server_count = server_count
        self.sync_delay_range_s = sync_delay_range_s
        self._rng = rng
        self._views = [_ServerView(cell_deg) for _ in range(server_count)]
        self._area_cache: OrderedDict[tuple, tuple[int, list[int]]] = OrderedDict()

    def home_server(self, account_creation_time: int) -> int:
        return account_creation_time % self.server_count

    def ingest(self, report: GpsReport, now: float) -> None:
        record = UserRecord(
            session_user_id=report.session_id,
            nickname=report.vehicle_id,
            account_creation_time=report.account_creation_time,
            gps=(report.lat, report.lon),
            gps_timestamp=report.timestamp,
            visible=report.visible,
        )
        home = self.home_server(record.account_creation_time)
        lo, hi = self.sync_delay_range_s
        for idx, view in enumerate(self._views):
            if idx == home:
                view.schedule(now, record)
            else:
                view.schedule(now + self._rng.uniform(lo, hi), record)

    def advance(self, now: float) -> None:
        for view in self._views:
            view.promote(now)

    def _visible_accounts(self, server_index: int, area: SearchArea) -> list[int]:
        view = self._views[server_index]
        key = (server_index, area.key())
        hit = self._area_cache.get(key)
        if hit is not None and hit[0] == view.layout_version:
            self._area_cache.move_to_end(key)
            return hit[1]
        accounts = view.accounts_in_area(area)
        self._area_cache[key] = (view.layout_version, accounts)
        self._area_cache.move_to_end(key)
        while len(self._area_cache) > 256:
            self._area_cache.popitem(last=False)
        return accounts

    def query(
        self,
        server_index: int,
        area: SearchArea,
        now: float,
        rng: np.random.Generator,
        cap: int = QUERY_CAP,
    ) -> list[UserRecord]:
        """One downsampled area query against one server's view at ``now``."""
        if not 0 <= server_index < self.server_count:
            raise ValueError(f"bad server index {server_index}")
        view = self._views[server_index]
        view.promote(now)
        accounts = self._visible_accounts(server_index, area)
        if len(accounts) > cap:
            picks = rng.choice(len(accounts), size=cap, replace=False)
            picks.sort()
            chosen = [accounts[i] for i in picks]
        else:
            chosen = accounts
        return [view.current[a] for a in chosen]

    def merge_server_views(
        self,
        area: SearchArea,
        now: float,
        rng: np.random.Generator,
        queries_per_server: int = 1,
        cap: int = QUERY_CAP,
    ) -> dict[int, UserRecord]:
        """Union of repeated queries across every server, keyed by the
        persistent account-creation-time identifier (freshest record wins)."""
        if queries_per_server < 1:
            raise ValueError("queries_per_server must be >= 1")
        merged: dict[int, UserRecord] = {}
        for server_index in range(self.server_count):
            for _ in range(queries_per_server):
                for rec in self.query(server_index, area, now, rng, cap=cap):
                    old = merged.get(rec.account_creation_time)
                    if old is None or rec.gps_timestamp > old.gps_timestamp:
                        merged[rec.account_creation_time] = rec
        return merged


def expected_unique_users(m: int, n: int, cap: int = QUERY_CAP) -> float:
    """Expected distinct users seen after n uniformly downsampled queries
    over a population of m."""
    if m < 1:
        raise ValueError("population must be >= 1")
    if n < 0:
        raise ValueError("query count must be >= 0")
    p = min(cap, m) / m
    return m * (1.0 - (1.0 - p) ** n)


def appearance_distribution_check(
    observed_counts: Iterable[int],
    m: int,
    n: int,
    cap: int = QUERY_CAP,
    significance: float = 0.01,
    min_expected: float = 5.0,
) -> tuple[float, float, bool]:
    """Chi-square goodness of fit of per-user appearance counts against
    Binomial(n, cap/m).

    Returns (statistic, p_value, passed).  Tail bins are pooled until
    each expected bin mass reaches ``min_expected``.  When m <= cap the
    distribution is degenerate (every user shows up every time) and the
    check passes vacuously.
    """
    counts = np.asarray(list(observed_counts), dtype=np.int64)
    if counts.size != m:
        raise ValueError("need one appearance count per user")
    if m <= cap:
        return 0.0, 1.0, True
    p = cap / m
    support = np.arange(n + 1)
    pmf = stats.binom.pmf(support, n, p)
    expected = pmf * m
    observed_hist = np.bincount(counts, minlength=n + 1).astype(float)

    # pool adjacent bins until each pooled bin expects at least min_expected
    pooled_obs: list[float] = []
    pooled_exp: list[float] = []
    acc_o = acc_e = 0.0
    for o, e in zip(observed_hist, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_obs.append(acc_o)
            pooled_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if pooled_exp:
        pooled_obs[-1] += acc_o
        pooled_exp[-1] += acc_e
    else:
        pooled_obs, pooled_exp = [acc_o], [acc_e]
    if len(pooled_exp) < 2:
        return 0.0, 1.0, True
    obs = np.array(pooled_obs)
    exp = np.array(pooled_exp) * (obs.sum() / sum(pooled_exp))
    statistic = float(((obs - exp) ** 2 / exp).sum())
    dof = len(pooled_exp) - 1
    p_value = float(stats.chi2.sf(statistic, dof))
    return statistic, p_value, p_value >= significance


QUERY_LOG_COLUMNS = ["time_s", "server", "area", "returned_count", "account_ids"]


class QueryLog:
    def __init__(self) -> None:
        self.rows: list[tuple[float, int, str, int, str]] = []

    def record(self, now: float, server: int, area: SearchArea, records: list[UserRecord]) -> None:
        area_s = ":".join(f"{v:.6f}" for v in (area.lat_min, area.lon_min, area.lat_max, area.lon_max))
        ids = ";".join(str(r.account_creation_time) for r in records)
        self.rows.append((now, server, area_s, len(records), ids))

    def write(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(QUERY_LOG_COLUMNS)
            for now, server, area_s, count, ids in self.rows:
                writer.writerow([f"{now:.1f}", server, area_s, count, ids])

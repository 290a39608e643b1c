"""Unit conversions shared across the simulator.

World geometry lives in a local flat tangent plane measured in miles;
latitude/longitude only appear at the server query surface.  The
conversion uses a constant miles-per-degree scale anchored at a world
origin, which is accurate to well under a meter at the scales simulated
here (tens of miles).
"""

from __future__ import annotations

import math

MILES_PER_DEG_LAT = 69.0
MPH_TO_MI_PER_S = 1.0 / 3600.0
METERS_PER_MILE = 1609.344

DEFAULT_ORIGIN = (0.0, 0.0)


def miles_per_deg_lon(origin_lat: float) -> float:
    return MILES_PER_DEG_LAT * math.cos(math.radians(origin_lat))


def xy_to_latlon(x_mi: float, y_mi: float, origin: tuple[float, float] = DEFAULT_ORIGIN) -> tuple[float, float]:
    """Map local (east, north) miles to (lat, lon) degrees."""
    lat0, lon0 = origin
    return (lat0 + y_mi / MILES_PER_DEG_LAT, lon0 + x_mi / miles_per_deg_lon(lat0))


def latlon_to_xy(lat: float, lon: float, origin: tuple[float, float] = DEFAULT_ORIGIN) -> tuple[float, float]:
    """Inverse of :func:`xy_to_latlon`."""
    lat0, lon0 = origin
    return ((lon - lon0) * miles_per_deg_lon(lat0), (lat - lat0) * MILES_PER_DEG_LAT)


def meters_to_miles(m: float) -> float:
    return m / METERS_PER_MILE


def miles_to_meters(mi: float) -> float:
    return mi * METERS_PER_MILE

"""Geodesic helpers shared across the pipeline.

Spherical Earth throughout; all functions broadcast over numpy arrays.
"""

from typing import Tuple

import numpy as np

# Earth's mean radius in meters
EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between points given in degrees.

    Args:
        lat1, lon1: First point(s) in degrees
        lat2, lon2: Second point(s) in degrees

    Returns:
        Distance(s) in meters, float or ndarray following numpy broadcasting
    """
    lat1_rad = np.radians(lat1)
    lat2_rad = np.radians(lat2)
    dlat = np.radians(np.asarray(lat2) - np.asarray(lat1))
    dlon = np.radians(np.asarray(lon2) - np.asarray(lon1))

    a = np.sin(dlat / 2) ** 2 + np.cos(lat1_rad) * np.cos(lat2_rad) * np.sin(dlon / 2) ** 2
    # rounding can push a a hair above 1 for antipodal points
    c = 2 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return EARTH_RADIUS_M * c


def meters_to_degrees(dx_m, dy_m, ref_lat) -> Tuple:
    """Convert a local east/north offset in meters to (dlat, dlon) degrees.

    Equirectangular approximation anchored at ``ref_lat``.
    """
    dlat = np.degrees(np.asarray(dy_m) / EARTH_RADIUS_M)
    dlon = np.degrees(np.asarray(dx_m) / (EARTH_RADIUS_M * np.cos(np.radians(ref_lat))))
    return dlat, dlon


def degrees_to_meters(dlat, dlon, ref_lat) -> Tuple:
    """Inverse of :func:`meters_to_degrees`: returns (dx_m east, dy_m north)."""
    dy = np.radians(np.asarray(dlat)) * EARTH_RADIUS_M
    dx = np.radians(np.asarray(dlon)) * EARTH_RADIUS_M * np.cos(np.radians(ref_lat))
    return dx, dy

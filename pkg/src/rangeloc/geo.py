"""Coordinate frames and error metrics.

All geometry lives in a Cartesian Earth-centered Earth-fixed (ECEF) frame.
Local tangent-plane east/north/up (ENU) frames are built on a spherical
Earth (radius 6,371,000 m): every error metric here is relative, so
ellipsoidal corrections would cancel out anyway.
"""

from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# sanity bands used by callers that flag vectors as orbital / near-surface
ORBITAL_NORM_RANGE = (2.0e7, 3.5e7)
SURFACE_NORM_RANGE = (6.2e6, 6.6e6)


class DegenerateFrameError(ValueError):
    """Reference point cannot define a tangent frame (e.g. zero norm)."""


class DegenerateGeometryError(ValueError):
    """Two points coincide where a direction is required."""


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


def enu_rotation(ref) -> np.ndarray:
    """Rows are the east, north, up unit vectors at ``ref`` in ECEF.

    Up is the spherical-Earth normal (radial direction). Raises
    DegenerateFrameError at the Earth center and on the poles' azimuth
    singularity only when east is genuinely undefined (ref on the z-axis
    gets the conventional east = +y).
    """
    r = _as_vec3(ref)
    norm = np.linalg.norm(r)
    if norm < 1e-6:
        raise DegenerateFrameError("reference at Earth center cannot define a tangent frame")
    up = r / norm
    # east = z x up normalized; degenerate on the z-axis, pick +y there
    east = np.cross([0.0, 0.0, 1.0], up)
    e_norm = np.linalg.norm(east)
    if e_norm < 1e-12:
        east = np.array([0.0, 1.0, 0.0])
    else:
        east = east / e_norm
    north = np.cross(up, east)
    return np.vstack([east, north, up])


def ecef_to_enu(p, ref) -> np.ndarray:
    """ECEF point -> (east, north, up) relative to ``ref``."""
    rot = enu_rotation(ref)
    return rot @ (_as_vec3(p) - _as_vec3(ref))


def enu_to_ecef(v, ref) -> np.ndarray:
    """Exact inverse of :func:`ecef_to_enu`."""
    rot = enu_rotation(ref)
    return _as_vec3(ref) + rot.T @ _as_vec3(v)


def elevation_azimuth(sat, rx) -> tuple[float, float]:
    """Elevation and azimuth (degrees) of ``sat`` as seen from ``rx``.

    Azimuth is clockwise from north in [0, 360); elevation is measured
    from the tangent plane in [-90, 90]. At exact zenith the azimuth is 0.
    """
    los = ecef_to_enu(sat, rx)
    rng = np.linalg.norm(los)
    if rng < 1e-9:
        raise DegenerateGeometryError("satellite and receiver coincide")
    e, n, u = los / rng
    elevation = np.degrees(np.arcsin(np.clip(u, -1.0, 1.0)))
    horiz = np.hypot(e, n)
    if horiz < 1e-15:
        azimuth = 0.0
    else:
        azimuth = float(np.degrees(np.arctan2(e, n))) % 360.0
    return float(elevation), azimuth


def horizontal_error(est, truth) -> float:
    """2-D (east/north) distance between an estimate and the true position."""
    enu = ecef_to_enu(est, truth)
    return float(np.hypot(enu[0], enu[1]))


def geodetic_to_ecef(lat_deg: float, lon_deg: float, alt_m: float = 0.0) -> np.ndarray:
    """Spherical-Earth geodetic coordinates to ECEF. Convenience for scenarios."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    r = EARTH_RADIUS_M + alt_m
    return np.array([
        r * np.cos(lat) * np.cos(lon),
        r * np.cos(lat) * np.sin(lon),
        r * np.sin(lat),
    ])

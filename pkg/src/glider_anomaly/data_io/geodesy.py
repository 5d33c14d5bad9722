"""Equirectangular local tangent-plane projection.

Good to well under a metre over the few-hundred-kilometre regions a glider
covers, which is far below the tens-of-metres tracking error scale. Fixed
metres-per-degree constants are used on purpose so results are reproducible
without a geodesy library.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

M_PER_DEG_LON = 111320.0  # at the equator, scaled by cos(lat0)
M_PER_DEG_LAT = 110574.0
MAX_ABS_LAT = 85.0


@dataclass(frozen=True)
class LocalFrame:
    lat0: float
    lon0: float

    def __post_init__(self):
        if not (math.isfinite(self.lat0) and math.isfinite(self.lon0)):
            raise DomainError("frame origin must be finite")
        if abs(self.lat0) > MAX_ABS_LAT:
            raise DomainError(f"origin latitude {self.lat0} outside +/-{MAX_ABS_LAT} deg")
        if abs(self.lon0) > 180:
            raise DomainError(f"origin longitude {self.lon0} outside +/-180 deg")

    @property
    def mx(self) -> float:
        """Metres per degree of longitude at the origin."""
        return math.cos(math.radians(self.lat0)) * M_PER_DEG_LON

    @property
    def my(self) -> float:
        return M_PER_DEG_LAT


def project(frame: LocalFrame, lat, lon):
    """Degrees to local east/north metres. Works on scalars or arrays."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise DomainError("non-finite latitude/longitude")
    if np.any(np.abs(lat) > MAX_ABS_LAT):
        raise DomainError(f"latitude beyond +/-{MAX_ABS_LAT} deg is not supported")
    x = (lon - frame.lon0) * frame.mx
    y = (lat - frame.lat0) * frame.my
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def unproject(frame: LocalFrame, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("non-finite coordinates")
    lat = frame.lat0 + y / frame.my
    lon = frame.lon0 + x / frame.mx
    if np.any(np.abs(lat) > MAX_ABS_LAT):
        raise DomainError(f"latitude beyond +/-{MAX_ABS_LAT} deg is not supported")
    if lat.ndim == 0:
        return float(lat), float(lon)
    return lat, lon

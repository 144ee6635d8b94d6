"""ADS-B state vectors: OpenSky-style parsing, local xyz transform, box filter, fetching."""

from __future__ import annotations

import json
import math
import os
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import BOX_HALF_XY, BOX_Z_MAX, PlaneState

EARTH_RADIUS = 6_371_000.0
TOKEN_ENV = "CCRKIT_ADSB_TOKEN"

# positional indices of an OpenSky /states/all row
IDX_ICAO24, IDX_CALLSIGN, IDX_TIME_POSITION, IDX_LAST_CONTACT = 0, 1, 3, 4
IDX_LON, IDX_LAT, IDX_GEO_ALTITUDE = 5, 6, 13


class AdsbParseError(ValueError):
    pass


class FetchError(IOError):
    pass


class RateLimitError(FetchError):
    pass


@dataclass(frozen=True)
class StateVector:
    icao24: str
    callsign: str | None
    lat: float
    lon: float
    geo_altitude: float
    time: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise AdsbParseError(f"{self.icao24}: coordinates out of range ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class AirportOrigin:
    lat0: float
    lon0: float
    radius: float = EARTH_RADIUS

    def __post_init__(self):
        if not (-90.0 <= self.lat0 <= 90.0 and -180.0 <= self.lon0 <= 180.0) or self.radius <= 0:
            raise ValueError("invalid airport origin")


def parse_state_vectors(raw: str | bytes | dict) -> list[StateVector]:
    """Rows lacking a position, altitude or call-sign are dropped."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise AdsbParseError(f"not JSON: {exc}") from None
    if not isinstance(raw, dict) or "states" not in raw:
        raise AdsbParseError("document has no 'states' field")
    states = raw["states"] or []
    if not isinstance(states, list):
        raise AdsbParseError("'states' must be a list")
    doc_time = raw.get("time")
    out = []
    for i, row in enumerate(states):
        if not isinstance(row, list) or len(row) <= IDX_GEO_ALTITUDE:
            raise AdsbParseError(f"state row {i} is not a positional array of >= 14 fields")
        lon, lat, alt, sign = row[IDX_LON], row[IDX_LAT], row[IDX_GEO_ALTITUDE], row[IDX_CALLSIGN]
        if lon is None or lat is None or alt is None or sign is None or not str(sign).strip():
            continue
        t = next((row[k] for k in (IDX_TIME_POSITION, IDX_LAST_CONTACT) if row[k] is not None), doc_time)
        try:
            out.append(StateVector(str(row[IDX_ICAO24]), str(sign).rstrip(), float(lat), float(lon),
                                   float(alt), float(t) if t is not None else 0.0))
        except (TypeError, ValueError) as exc:
            raise AdsbParseError(f"state row {i}: {exc}") from None
    return out


def enu_transform(sv: StateVector, origin: AirportOrigin) -> tuple[float, float, float]:
    """Equirectangular local tangent plane; z is the geometric altitude."""
    dlat = math.radians(sv.lat - origin.lat0)
    dlon = math.radians(sv.lon - origin.lon0)
    x = origin.radius * math.cos(math.radians(origin.lat0)) * dlon
    y = origin.radius * dlat
    return x, y, sv.geo_altitude


def in_box(xyz: Sequence[float], half_x=BOX_HALF_XY, half_y=BOX_HALF_XY, z_max=BOX_Z_MAX) -> bool:
    x, y, z = xyz
    return abs(x) <= half_x and abs(y) <= half_y and 0.0 <= z <= z_max


def bbox_filter(planes: Iterable, half_x=BOX_HALF_XY, half_y=BOX_HALF_XY, z_max=BOX_Z_MAX) -> list:
    """Closed box: points on the boundary are kept.  Accepts xyz tuples or PlaneStates."""
    out = []
    for p in planes:
        xyz = p.xyz if isinstance(p, PlaneState) else p
        if in_box(xyz, half_x, half_y, z_max):
            out.append(p)
    return out


def nearest_in_time(states: Iterable[StateVector], t: float) -> list[StateVector]:
    """One vector per call-sign: the one closest to ``t`` (earlier wins ties)."""
    best: dict[str, StateVector] = {}
    for sv in states:
        cur = best.get(sv.callsign)
        if cur is None or (abs(sv.time - t), sv.time) < (abs(cur.time - t), cur.time):
            best[sv.callsign] = sv
    return [best[k] for k in sorted(best)]


def states_to_planes(states: Iterable[StateVector], origin: AirportOrigin, t: float) -> list[PlaneState]:
    """Nearest-in-time vector per call-sign, transformed and box-filtered."""
    planes = []
    for sv in nearest_in_time(states, t):
        x, y, z = enu_transform(sv, origin)
        planes.append(PlaneState(sv.callsign, x, y, z, sv.time))
    return bbox_filter(planes)


def degree_bbox(origin: AirportOrigin, half_x=BOX_HALF_XY, half_y=BOX_HALF_XY):
    """``(lamin, lomin, lamax, lomax)`` covering the local box."""
    dlat = math.degrees(half_y / origin.radius)
    dlon = math.degrees(half_x / (origin.radius * math.cos(math.radians(origin.lat0))))
    return origin.lat0 - dlat, origin.lon0 - dlon, origin.lat0 + dlat, origin.lon0 + dlon


def states_url(endpoint: str, t: int | None, bbox: Sequence[float]) -> str:
    lamin, lomin, lamax, lomax = bbox
    query = [("lamin", lamin), ("lomin", lomin), ("lamax", lamax), ("lomax", lomax)]
    if t is not None:
        query.insert(0, ("time", int(t)))
    sep = "&" if "?" in endpoint else "?"
    return endpoint + sep + urllib.parse.urlencode(query)


def fetch_states(
    source: str | Path,
    t: int | None = None,
    bbox: Sequence[float] | None = None,
    attempts: int = 3,
    backoff: float = 1.0,
    timeout: float = 10.0,
    opener=urllib.request.urlopen,
) -> bytes:
    """Raw document from a file path or an OpenSky-compatible ``/states/all`` URL.

    Network failures are retried with exponential backoff; HTTP 429 raises
    :class:`RateLimitError` at once.  A bearer token is taken from the
    ``CCRKIT_ADSB_TOKEN`` environment variable when set.
    """
    src = str(source)
    if not src.startswith(("http://", "https://")):
        try:
            return Path(src).read_bytes()
        except OSError as exc:
            raise FetchError(f"cannot read {src}: {exc}") from None
    if bbox is None:
        raise ValueError("HTTP mode needs a bounding box")
    req = urllib.request.Request(states_url(src, t, bbox))
    token = os.environ.get(TOKEN_ENV)
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            with opener(req, timeout=timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 429:
                raise RateLimitError(f"rate limited by {src}") from None
            last = exc
        except (urllib.error.URLError, OSError) as exc:
            last = exc
        if attempt + 1 < attempts:
            time.sleep(backoff * 2**attempt)
    raise FetchError(f"fetch failed after {attempts} attempts: {last}")

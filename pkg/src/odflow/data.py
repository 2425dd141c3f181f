"""Ingestion of station lists, survey journeys, and barrier counts.

CSV schemas (documented bit-exactly in the README):

  stations:  id,name,lat,lon,has_barrier
  journeys:  id,origin_lat,origin_lon,destination_lat,destination_lon,date,ticket_class
             or  id,origin_station,destination_station,date,ticket_class
  barriers:  date,station_id,departures,arrivals
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import date as _date
from pathlib import Path

import numpy as np

from .core import ODMatrix, ObservationSet, symmetrize
from .errors import SchemaError

__all__ = [
    "Station",
    "JourneyRecord",
    "SurveyBuild",
    "load_stations",
    "haversine_km",
    "assign_nearest_station",
    "load_journeys",
    "build_survey_od",
    "load_barrier_counts",
    "EARTH_RADIUS_KM",
]

EARTH_RADIUS_KM = 6371.0

TICKET_CLASSES = ("casual", "regular_specific", "regular_zone")


@dataclass(frozen=True)
class Station:
    id: str
    name: str
    lat: float
    lon: float
    has_barrier: bool = True

    def __post_init__(self):
        if not self.id:
            raise ValueError("station id must be non-empty")
        if not -90 <= self.lat <= 90:
            raise ValueError(f"station {self.id}: latitude {self.lat} out of range")
        if not -180 <= self.lon <= 180:
            raise ValueError(f"station {self.id}: longitude {self.lon} out of range")


@dataclass(frozen=True)
class JourneyRecord:
    """One surveyed journey; endpoints are station ids or (lat, lon) pairs."""

    person_id: str
    origin: str | tuple[float, float]
    destination: str | tuple[float, float]
    date: _date | None = None
    ticket_class: str = "regular_zone"


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def load_stations(path) -> list[Station]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{path}: empty station file (no network)")
            expected = ["id", "name", "lat", "lon", "has_barrier"]
            if [f.strip() for f in reader.fieldnames] != expected:
                raise SchemaError(
                    f"{path}: station header must be {','.join(expected)}"
                )
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read stations file {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: station file has no rows (empty network)")
    stations = []
    seen = set()
    for lineno, row in enumerate(rows, 2):
        sid = row["id"].strip()
        if sid in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate station id {sid!r}")
        seen.add(sid)
        flag = row["has_barrier"].strip().lower()
        if flag not in _BOOL:
            raise SchemaError(f"{path}:{lineno}: has_barrier must be true/false")
        try:
            st = Station(
                id=sid,
                name=row["name"].strip(),
                lat=float(row["lat"]),
                lon=float(row["lon"]),
                has_barrier=_BOOL[flag],
            )
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        stations.append(st)
    return stations


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance on a spherical Earth of radius 6371 km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def _euclidean_deg(lat1, lon1, lat2, lon2) -> float:
    return math.hypot(lat1 - lat2, lon1 - lon2)


def assign_nearest_station(
    point: tuple[float, float],
    stations: list[Station],
    *,
    metric: str = "haversine",
) -> str:
    """Id of the station nearest to (lat, lon); distance ties pick the smaller id.

    ``metric="euclidean"`` switches to plain distance on degrees, kept for
    sensitivity checks only.
    """
    if not stations:
        raise ValueError("station list is empty")
    lat, lon = point
    dist = haversine_km if metric == "haversine" else _euclidean_deg
    if metric not in ("haversine", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")
    ds = [(dist(lat, lon, s.lat, s.lon), s.id) for s in stations]
    dmin = min(d for d, _ in ds)
    tol = 1e-9 * max(1.0, dmin)
    return min(sid for d, sid in ds if d <= dmin + tol)


def load_journeys(path) -> list[JourneyRecord]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{path}: empty journeys file")
            fields = [f.strip() for f in reader.fieldnames]
            coord_hdr = [
                "id", "origin_lat", "origin_lon", "destination_lat",
                "destination_lon", "date", "ticket_class",
            ]
            station_hdr = ["id", "origin_station", "destination_station", "date", "ticket_class"]
            if fields == coord_hdr:
                by_coords = True
            elif fields == station_hdr:
                by_coords = False
            else:
                raise SchemaError(
                    f"{path}: journeys header must be {','.join(coord_hdr)} "
                    f"or {','.join(station_hdr)}"
                )
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read journeys file {path}: {exc}") from exc
    out = []
    for lineno, row in enumerate(rows, 2):
        klass = row["ticket_class"].strip()
        if klass not in TICKET_CLASSES:
            raise SchemaError(
                f"{path}:{lineno}: ticket_class must be one of {TICKET_CLASSES}"
            )
        try:
            day = _date.fromisoformat(row["date"].strip()) if row["date"].strip() else None
            if by_coords:
                origin = (float(row["origin_lat"]), float(row["origin_lon"]))
                destination = (float(row["destination_lat"]), float(row["destination_lon"]))
            else:
                origin = row["origin_station"].strip()
                destination = row["destination_station"].strip()
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        out.append(
            JourneyRecord(
                person_id=row["id"].strip(),
                origin=origin,
                destination=destination,
                date=day,
                ticket_class=klass,
            )
        )
    if not out:
        raise SchemaError(f"{path}: journeys file has no rows")
    return out


@dataclass(frozen=True)
class SurveyBuild:
    """Tally of surveyed journeys after nearest-station assignment.

    ``counts`` is the raw directed tally; ``matrix`` its symmetrized version
    used for estimation. total + dropped equals the input record count.
    """

    counts: np.ndarray
    matrix: ODMatrix
    total: int
    dropped: int


def build_survey_od(records: list[JourneyRecord], stations: list[Station]) -> SurveyBuild:
    """Count journeys per (origin, destination) station pair.

    Coordinate endpoints are assigned to the nearest station; journeys whose
    two endpoints land on the same station are dropped (the OD diagonal is
    zero by construction) and reported in ``dropped``.
    """
    if not records:
        raise SchemaError("no journey records to tally")
    ids = [s.id for s in stations]
    index = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)
    counts = np.zeros((n, n), dtype=np.int64)
    dropped = 0

    def resolve(endpoint) -> int:
        if isinstance(endpoint, str):
            if endpoint not in index:
                raise SchemaError(f"journey references unknown station {endpoint!r}")
            return index[endpoint]
        return index[assign_nearest_station(endpoint, stations)]

    for rec in records:
        i = resolve(rec.origin)
        j = resolve(rec.destination)
        if i == j:
            dropped += 1
            continue
        counts[i, j] += 1
    if dropped:
        warnings.warn(f"{dropped} same-station journey(s) dropped", stacklevel=2)
    return SurveyBuild(
        counts=counts,
        matrix=symmetrize(counts.astype(float), station_ids=tuple(ids)),
        total=int(counts.sum()),
        dropped=dropped,
    )


def load_barrier_counts(path, station_ids=None) -> ObservationSet:
    """Read per-day departure/arrival margins ordered by date then station.

    The file must cover every (date, station) cell; gaps are listed in the
    error. Days whose total departures and arrivals disagree produce a
    warning with the per-day delta.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            expected = ["date", "station_id", "departures", "arrivals"]
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
                raise SchemaError(f"{path}: barrier header must be {','.join(expected)}")
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read barrier file {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: barrier file has no rows")
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    dates: list[str] = []
    stations_seen: list[str] = []
    for lineno, row in enumerate(rows, 2):
        day = row["date"].strip()
        sid = row["station_id"].strip()
        try:
            _date.fromisoformat(day)
            dep = float(row["departures"])
            arr = float(row["arrivals"])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        if (day, sid) in cells:
            raise SchemaError(f"{path}:{lineno}: duplicate cell ({day}, {sid})")
        cells[(day, sid)] = (dep, arr)
        if day not in dates:
            dates.append(day)
        if sid not in stations_seen:
            stations_seen.append(sid)
    ids = list(station_ids) if station_ids is not None else sorted(stations_seen)
    dates.sort()
    missing = [
        (day, sid) for day in dates for sid in ids if (day, sid) not in cells
    ]
    if missing:
        shown = ", ".join(f"({d}, {s})" for d, s in missing[:8])
        raise SchemaError(
            f"{path}: {len(missing)} missing station-day cell(s): {shown}"
            + ("..." if len(missing) > 8 else "")
        )
    extra = set(stations_seen) - set(ids)
    if extra:
        raise SchemaError(f"{path}: unknown station id(s) {sorted(extra)}")
    y_dep = np.array([[cells[(d, s)][0] for s in ids] for d in dates])
    y_arr = np.array([[cells[(d, s)][1] for s in ids] for d in dates])
    deltas = y_dep.sum(axis=1) - y_arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(deltas) > 1e-9)
    if bad.size:
        detail = ", ".join(f"{dates[i]}: {deltas[i]:+g}" for i in bad[:5])
        warnings.warn(
            f"{bad.size} day(s) with departure/arrival imbalance ({detail})",
            stacklevel=2,
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        obs = ObservationSet(y_dep=y_dep, y_arr=y_arr, station_ids=tuple(ids))
    return obs

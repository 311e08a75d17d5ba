"""CSV formats for sampled fields and location lists.

One strict v1 format: header ``location_id,lat_deg,lon_deg,t,value``, UTF-8,
LF line endings, ``.`` decimal separator.  Readers fail loudly with line
numbers rather than repair, and the location x time rectangle must be
complete — lag matching in the moment estimator assumes aligned time grids,
so holes would silently bias bins if tolerated.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import ConfigError
from .simulate import SampledField
from .sphere import SpherePoint

__all__ = [
    "FIELD_HEADER",
    "LOCATION_HEADER",
    "load_locations_csv",
    "read_field_csv",
    "write_field_csv",
]

FIELD_HEADER = ("location_id", "lat_deg", "lon_deg", "t", "value")
LOCATION_HEADER = ("location_id", "lat_deg", "lon_deg")

# repr-exact for float64, so a write/read cycle is lossless
_FLOAT_FMT = "%.17g"


def _parse_int(text, line_no, what):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"line {line_no}: {what} {text!r} is not an integer")


def _parse_float(text, line_no, what):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"line {line_no}: {what} {text!r} is not a number")
    if not math.isfinite(value):
        raise ConfigError(f"line {line_no}: {what} {text!r} is not finite")
    return value


def _parse_coords(row, line_no):
    lat = _parse_float(row["lat_deg"], line_no, "lat_deg")
    lon = _parse_float(row["lon_deg"], line_no, "lon_deg")
    if not -90.0 <= lat <= 90.0:
        raise ConfigError(f"line {line_no}: lat_deg {lat!r} outside [-90, 90]")
    if not -180.0 <= lon < 360.0:
        raise ConfigError(
            f"line {line_no}: lon_deg {lon!r} outside [-180, 180) and [0, 360)"
        )
    return lon, lat


def _open_rows(path, header):
    """Yield (line_no, row_dict) for a strict-header CSV file."""
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: file is empty")
        if tuple(name.strip() for name in first) != header:
            raise ConfigError(
                f"{path}: expected header {','.join(header)!r}, "
                f"got {','.join(first)!r}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue  # tolerate a trailing blank line
            if len(row) != len(header):
                raise ConfigError(
                    f"line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            yield line_no, dict(zip(header, row))


def read_field_csv(path) -> SampledField:
    """Read a complete location x time rectangle of observations."""
    coords: dict[int, tuple[float, float]] = {}
    cells: dict[int, dict[int, float]] = {}
    for line_no, row in _open_rows(path, FIELD_HEADER):
        loc = _parse_int(row["location_id"], line_no, "location_id")
        lon, lat = _parse_coords(row, line_no)
        t = _parse_int(row["t"], line_no, "t")
        if t < 0:
            raise ConfigError(f"line {line_no}: t {t} must be >= 0")
        value = _parse_float(row["value"], line_no, "value")
        if loc in coords and coords[loc] != (lon, lat):
            raise ConfigError(
                f"line {line_no}: location {loc} redefined with different "
                f"coordinates"
            )
        if loc in cells and t in cells[loc]:
            raise ConfigError(
                f"line {line_no}: duplicate cell (location {loc}, t={t})"
            )
        coords.setdefault(loc, (lon, lat))
        cells.setdefault(loc, {})[t] = value
    if not cells:
        raise ConfigError(f"{path}: no data rows")

    loc_ids = sorted(cells)
    times = sorted({t for per_loc in cells.values() for t in per_loc})
    missing = [
        (loc, t) for loc in loc_ids for t in times if t not in cells[loc]
    ]
    if missing:
        shown = ", ".join(f"(location {loc}, t={t})" for loc, t in missing[:10])
        more = f", and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise ConfigError(
            f"incomplete rectangle: {len(missing)} missing cells: {shown}{more}"
        )

    locations = tuple(
        SpherePoint.from_degrees(coords[loc][0], coords[loc][1]) for loc in loc_ids
    )
    values = np.array(
        [[cells[loc][t] for t in times] for loc in loc_ids], dtype=float
    )
    return SampledField(
        locations=locations,
        times=np.array(times, dtype=np.int64),
        values=values,
        meta={"source": str(path), "location_ids": loc_ids},
    )


def write_field_csv(field: SampledField, path) -> None:
    """Write a field as one row per (location, time), ids positional."""
    if field.n_locations == 0 or field.n_times == 0:
        raise ConfigError("cannot write an empty field")
    lons, lats = field.lonlat()
    lat_deg = np.degrees(lats)
    lon_deg = np.degrees(lons)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(FIELD_HEADER) + "\n")
        for i in range(field.n_locations):
            lat_txt = _FLOAT_FMT % lat_deg[i]
            lon_txt = _FLOAT_FMT % lon_deg[i]
            for a, t in enumerate(field.times):
                value_txt = _FLOAT_FMT % field.values[i, a]
                handle.write(f"{i},{lat_txt},{lon_txt},{int(t)},{value_txt}\n")


def load_locations_csv(path) -> tuple[SpherePoint, ...]:
    """Read explicit sampling locations, ordered by their integer ids."""
    coords: dict[int, tuple[float, float]] = {}
    for line_no, row in _open_rows(path, LOCATION_HEADER):
        loc = _parse_int(row["location_id"], line_no, "location_id")
        if loc in coords:
            raise ConfigError(f"line {line_no}: duplicate location_id {loc}")
        coords[loc] = _parse_coords(row, line_no)
    if not coords:
        raise ConfigError(f"{path}: no data rows")
    return tuple(
        SpherePoint.from_degrees(coords[loc][0], coords[loc][1])
        for loc in sorted(coords)
    )

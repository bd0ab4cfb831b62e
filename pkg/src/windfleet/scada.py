"""Ingestion and preprocessing of 1 Hz turbine telemetry.

Parses the raw CSV feed, averages parameters over fixed windows, derives
the farm-level wind vector and checks wind stationarity ahead of any
zone analysis.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ScadaParseError

CSV_HEADER = ["timestamp", "turbine", "power_kw", "rotor_rpm", "wind_ms", "wind_dir_deg"]

DEFAULT_WINDOW_S = 120
DEFAULT_PRE_WINDOW_S = 600
DEFAULT_SPEED_TOL = 0.10
DEFAULT_DIR_TOL_DEG = 2.0

# A window with gaps still counts as full when it holds at least this
# fraction of its nominal 1 Hz samples.
WINDOW_MIN_COVERAGE = 0.9

# Below this resultant length the circular mean direction is meaningless.
_DIRECTION_RESULTANT_EPS = 1e-6


@dataclass(frozen=True, order=True)
class TurbineId:
    """Grid position of a turbine, printed as ``RR/C`` (e.g. ``10/4``)."""

    row: int
    column: int

    def __post_init__(self):
        if self.row < 1 or self.column < 1:
            raise DomainError(f"turbine indices start at 1, got {self.row}/{self.column}")

    def __str__(self) -> str:
        return f"{self.row:02d}/{self.column}"

    @classmethod
    def parse(cls, text: str) -> "TurbineId":
        parts = text.strip().split("/")
        if len(parts) != 2:
            raise ValueError(f"expected 'RR/C', got {text!r}")
        return cls(int(parts[0]), int(parts[1]))


@dataclass(frozen=True)
class ScadaRecord:
    """One 1-second measurement for one turbine."""

    timestamp: int
    turbine: TurbineId
    power: float  # kW, briefly negative draw is legal
    rotor_speed: float  # rpm
    wind_speed: float  # m/s
    wind_direction: float  # degrees in [0, 360)

    def __post_init__(self):
        if self.rotor_speed < 0:
            raise DomainError(f"rotor speed must be >= 0, got {self.rotor_speed}")
        if self.wind_speed < 0:
            raise DomainError(f"wind speed must be >= 0, got {self.wind_speed}")
        if not 0.0 <= self.wind_direction < 360.0:
            raise DomainError(f"wind direction must be in [0, 360), got {self.wind_direction}")


@dataclass(frozen=True)
class FeatureVector:
    """Per-turbine operating point averaged over one window."""

    turbine: TurbineId
    power_mean: float
    rotor_mean: float
    window_start: int
    window_len: int


@dataclass(frozen=True)
class WindVector:
    """Farm-level wind magnitude and circular-mean direction."""

    speed: float
    direction: float
    direction_undefined: bool = False


@dataclass
class ParseResult:
    records: list
    dropped_rows: int
    rows_read: int


def _text_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as handle:
            yield from handle
        return
    if isinstance(source, bytes):
        yield from io.StringIO(source.decode("utf-8"))
        return
    first = getattr(source, "read", None)
    if first is None:
        yield from source
        return
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    yield from io.StringIO(data)


def parse_scada(source: str | Path | bytes | IO, layout) -> ParseResult:
    """Read the raw CSV feed into validated records.

    ``layout`` supplies the farm dimensions and the set of turbines whose
    data is known to be absent; rows for those turbines are dropped and
    counted rather than rejected. A turbine id outside the grid raises
    ``ConfigurationError``; any malformed field raises ``ScadaParseError``
    with its 1-based line number.
    """
    reader = csv.reader(_text_lines(source))
    records: list[ScadaRecord] = []
    dropped = 0
    rows_read = 0
    header_seen = False
    for line_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if not header_seen:
            if [c.strip() for c in row] != CSV_HEADER:
                raise ScadaParseError(
                    f"expected header {','.join(CSV_HEADER)!r}, got {','.join(row)!r}", line_no
                )
            header_seen = True
            continue
        rows_read += 1
        if len(row) != len(CSV_HEADER):
            raise ScadaParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line_no)
        try:
            turbine = TurbineId.parse(row[1])
        except ValueError as exc:
            raise ScadaParseError(f"bad turbine id {row[1]!r}: {exc}", line_no) from exc
        if turbine.row > layout.rows or turbine.column > layout.columns:
            raise ConfigurationError(
                f"line {line_no}: turbine {turbine} outside the "
                f"{layout.rows}x{layout.columns} farm grid"
            )
        if turbine in layout.missing:
            dropped += 1
            continue
        try:
            record = ScadaRecord(
                timestamp=int(row[0]),
                turbine=turbine,
                power=float(row[2]),
                rotor_speed=float(row[3]),
                wind_speed=float(row[4]),
                wind_direction=float(row[5]),
            )
        except (ValueError, DomainError) as exc:
            raise ScadaParseError(str(exc), line_no) from exc
        records.append(record)
    if not header_seen:
        raise ScadaParseError("empty input, missing header", 1)
    return ParseResult(records=records, dropped_rows=dropped, rows_read=rows_read)


def window_average(
    records: Sequence[ScadaRecord],
    window_seconds: int = DEFAULT_WINDOW_S,
    min_coverage: float = WINDOW_MIN_COVERAGE,
) -> list[FeatureVector]:
    """Average power and rotor speed over fixed windows, per turbine.

    Windows tile forward from each turbine's first sample. A window is
    emitted only when the data span covers it entirely and it holds at
    least ``min_coverage`` of its nominal samples; a partial trailing
    window is never emitted. Empty input yields an empty list.
    """
    if window_seconds <= 0:
        raise DomainError(f"window_seconds must be > 0, got {window_seconds}")
    if not 0.0 < min_coverage <= 1.0:
        raise DomainError(f"min_coverage must be in (0, 1], got {min_coverage}")
    by_turbine: dict[TurbineId, list[ScadaRecord]] = {}
    for rec in records:
        by_turbine.setdefault(rec.turbine, []).append(rec)

    min_samples = min_coverage * window_seconds - 1e-9
    out: list[FeatureVector] = []
    for turbine in sorted(by_turbine):
        series = sorted(by_turbine[turbine], key=lambda r: r.timestamp)
        t0 = series[0].timestamp
        t_last = series[-1].timestamp
        n_windows = (t_last + 1 - t0) // window_seconds
        if n_windows <= 0:
            continue
        buckets: dict[int, list[ScadaRecord]] = {}
        for rec in series:
            j = (rec.timestamp - t0) // window_seconds
            if j < n_windows:
                buckets.setdefault(j, []).append(rec)
        for j in range(n_windows):
            members = buckets.get(j, [])
            if len(members) < min_samples:
                continue
            out.append(
                FeatureVector(
                    turbine=turbine,
                    power_mean=float(np.mean([r.power for r in members])),
                    rotor_mean=float(np.mean([r.rotor_speed for r in members])),
                    window_start=t0 + j * window_seconds,
                    window_len=window_seconds,
                )
            )
    return out


def farm_wind_vector(records: Sequence[ScadaRecord]) -> WindVector:
    """Average wind over all records: mean speed, circular mean direction.

    Directions are weighted equally. When the direction resultant nearly
    vanishes (opposing winds) the direction is flagged undefined.
    """
    if not records:
        raise DomainError("farm wind vector of an empty record set")
    n = len(records)
    dirs_rad = np.radians([r.wind_direction for r in records])
    # fsum keeps the means exactly permutation invariant
    resultant_x = math.fsum(np.cos(dirs_rad)) / n
    resultant_y = math.fsum(np.sin(dirs_rad)) / n
    resultant = math.hypot(resultant_x, resultant_y)
    speed = math.fsum(r.wind_speed for r in records) / n
    if resultant < _DIRECTION_RESULTANT_EPS:
        return WindVector(speed=speed, direction=0.0, direction_undefined=True)
    direction = _wrap_degrees(math.degrees(math.atan2(resultant_y, resultant_x)))
    return WindVector(speed=speed, direction=direction)


def _wrap_degrees(angle: float) -> float:
    wrapped = angle % 360.0
    return 0.0 if wrapped == 360.0 else wrapped


def _circular_diff_deg(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def check_steady_state(
    records: Sequence[ScadaRecord],
    pre_window_s: int = DEFAULT_PRE_WINDOW_S,
    window_s: int = DEFAULT_WINDOW_S,
    speed_tol: float = DEFAULT_SPEED_TOL,
    dir_tol: float = DEFAULT_DIR_TOL_DEG,
) -> tuple[bool, WindVector, WindVector]:
    """Check that the farm wind stays stable through a window and its lead-in.

    Builds one farm wind vector per second over the trailing
    ``pre_window_s + window_s`` seconds of the records. Stable means every
    per-second speed lies within ``speed_tol`` (relative) of the mean speed
    and every direction within ``dir_tol`` degrees of the circular mean.
    Returns the verdict plus the vectors at the slowest and fastest second.
    """
    if pre_window_s < 0 or window_s <= 0:
        raise DomainError("pre_window_s must be >= 0 and window_s > 0")
    if not records:
        raise DomainError("steady-state check needs records")
    by_second: dict[int, list[ScadaRecord]] = {}
    for rec in records:
        by_second.setdefault(rec.timestamp, []).append(rec)
    t_hi = max(by_second)
    span = pre_window_s + window_s
    t_lo = t_hi - span + 1
    seconds = range(t_lo, t_hi + 1)
    missing = [t for t in seconds if t not in by_second]
    if missing:
        raise DomainError(
            f"insufficient data: {len(missing)} of {span} seconds have no records"
        )
    vectors = [farm_wind_vector(by_second[t]) for t in seconds]
    if any(v.direction_undefined for v in vectors):
        lo = min(vectors, key=lambda v: v.speed)
        hi = max(vectors, key=lambda v: v.speed)
        return False, lo, hi
    mean_speed = float(np.mean([v.speed for v in vectors]))
    dir_rad = np.radians([v.direction for v in vectors])
    mean_dir = _wrap_degrees(
        math.degrees(math.atan2(float(np.mean(np.sin(dir_rad))), float(np.mean(np.cos(dir_rad)))))
    )
    ok = True
    for v in vectors:
        speed_dev = abs(v.speed - mean_speed)
        if mean_speed > 0 and speed_dev / mean_speed > speed_tol:
            ok = False
        if mean_speed == 0 and speed_dev > 0:
            ok = False
        if _circular_diff_deg(v.direction, mean_dir) > dir_tol:
            ok = False
    lo = min(vectors, key=lambda v: v.speed)
    hi = max(vectors, key=lambda v: v.speed)
    return ok, lo, hi


def normalize(values, lower: float, upper: float):
    """Map values affinely from [lower, upper] onto [0, 1], clamping.

    Bounds are physical configuration (e.g. 0 and rated power), not data
    extremes, so results are comparable across runs.
    """
    if not lower < upper:
        raise ConfigurationError(f"need lower < upper, got [{lower}, {upper}]")
    arr = np.asarray(values, dtype=float)
    scaled = np.clip((arr - lower) / (upper - lower), 0.0, 1.0)
    if np.isscalar(values) or arr.ndim == 0:
        return float(scaled)
    return scaled

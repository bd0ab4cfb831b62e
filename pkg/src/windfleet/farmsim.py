"""Deterministic, seedable storm simulator for a gridded wind farm.

A storm front sweeps the farm west to east: each row's wind trace jumps
above the high-wind alarm threshold at that row's arrival time. The two
westmost rows act as beacons and see the front earlier by a fixed lead.
Without a shutdown policy every turbine emergency-stops at its alarm;
with one, rows shut down on the policy's schedule and an emergency stop
happens only when the storm catches a turbine still running.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DomainError
from .scada import TurbineId

EVENT_ALARM = "ALARM_HIGH_WIND"
EVENT_PLANNED = "SHUTDOWN_PLANNED"
EVENT_EMERGENCY = "SHUTDOWN_EMERGENCY"

KIND_PLANNED = "planned"
KIND_EMERGENCY = "emergency"

BEACON_ROW_MAX = 2

# Calm-weather wind level; its exact shape never affects alarms.
BASE_WIND_MS = 12.0
# How far the storm wind sits above the alarm threshold.
STORM_MARGIN_MS = 10.0

# Turbines without recorded data in the storm case.
DEFAULT_MISSING = frozenset(
    {TurbineId(5, 5), TurbineId(6, 5), TurbineId(7, 5), TurbineId(8, 5)}
)


@dataclass(frozen=True)
class FarmLayout:
    """Grid geometry: rows run west to east, columns within a row."""

    rows: int = 11
    columns: int = 5
    spacing_m: float = 600.0
    missing: frozenset = DEFAULT_MISSING

    def __post_init__(self):
        if self.rows < 1 or self.columns < 1:
            raise ConfigurationError("layout needs at least one row and one column")
        if self.spacing_m <= 0:
            raise ConfigurationError(f"row spacing must be > 0, got {self.spacing_m}")
        for tid in self.missing:
            if tid.row > self.rows or tid.column > self.columns:
                raise ConfigurationError(f"missing turbine {tid} outside the grid")

    def turbines(self) -> list[TurbineId]:
        """Active turbines in deterministic row-major order."""
        return [
            TurbineId(r, c)
            for r in range(1, self.rows + 1)
            for c in range(1, self.columns + 1)
            if TurbineId(r, c) not in self.missing
        ]

    def active_in_row(self, row: int) -> int:
        return sum(1 for c in range(1, self.columns + 1) if TurbineId(row, c) not in self.missing)

    @property
    def active_count(self) -> int:
        return self.rows * self.columns - len(self.missing)


@dataclass(frozen=True)
class StormScenario:
    """Parametric west-to-east storm front."""

    direction: float = 265.4  # degrees, roughly orthogonal to the rows
    front_speed: float = 5.0  # m/s
    onset: float = 660.0  # seconds, arrival at row 1's nominal position
    alarm_threshold: float = 25.0  # m/s
    row_jitter_std: float = 10.0  # seconds
    gust_noise_std: float = 0.5  # m/s
    horizon: int = 3600  # seconds of 1 Hz logs
    beacon_lead: float = 600.0  # seconds the beacon rows see the front early

    def __post_init__(self):
        if self.front_speed <= 0:
            raise ConfigurationError(f"front speed must be > 0, got {self.front_speed}")
        if self.alarm_threshold <= 0:
            raise ConfigurationError(f"alarm threshold must be > 0, got {self.alarm_threshold}")
        if self.horizon < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon}")
        if self.row_jitter_std < 0 or self.gust_noise_std < 0:
            raise ConfigurationError("noise levels must be >= 0")

    def row_travel_s(self, spacing_m: float) -> float:
        """Seconds the front needs to cross one row spacing."""
        return spacing_m / self.front_speed


@dataclass
class EventLog:
    """Alarms and shutdowns, each at an integer second."""

    alarms: list = field(default_factory=list)  # (t, TurbineId)
    shutdowns: list = field(default_factory=list)  # (t, TurbineId, kind)

    def first_alarms(self) -> dict:
        first: dict[TurbineId, int] = {}
        for t, tid in self.alarms:
            if tid not in first or t < first[tid]:
                first[tid] = t
        return first


@dataclass
class SimulationResult:
    log: EventLog
    traces: dict  # TurbineId -> np.ndarray of wind speed, 1 Hz
    arrivals: np.ndarray  # per-row arrival seconds (float)
    t_detect: int | None = None


def row_arrivals(scenario: StormScenario, layout: FarmLayout, seed: int = 0) -> np.ndarray:
    """Arrival time of the front at each row, jitter drawn once per row."""
    rng = np.random.default_rng(seed)
    return _draw_row_arrivals(scenario, layout, rng)


def _draw_row_arrivals(
    scenario: StormScenario, layout: FarmLayout, rng: np.random.Generator
) -> np.ndarray:
    rows = np.arange(1, layout.rows + 1)
    travel = scenario.row_travel_s(layout.spacing_m)
    jitter = rng.normal(0.0, scenario.row_jitter_std, size=layout.rows)
    lead = np.where(rows <= BEACON_ROW_MAX, scenario.beacon_lead, 0.0)
    return scenario.onset - lead + (rows - 1) * travel + jitter


def storm_arrival(
    scenario: StormScenario, layout: FarmLayout, row: int, seed: int = 0
) -> float:
    """Arrival second of the front at one row, reproducible from the seed."""
    if not 1 <= row <= layout.rows:
        raise DomainError(f"row must be in [1, {layout.rows}], got {row}")
    return float(row_arrivals(scenario, layout, seed)[row - 1])


def first_alarm_second(arrival: float, horizon: int) -> int | None:
    """First integer second at which the storm wind exceeds the threshold."""
    t = max(0, math.ceil(arrival))
    return t if t < horizon else None


def simulate(
    layout: FarmLayout,
    scenario: StormScenario,
    policy=None,
    seed: int = 0,
    rule=None,
) -> SimulationResult:
    """Run one storm hour and record alarms, shutdowns and wind traces.

    Without ``policy`` every active turbine emergency-stops the second its
    alarm fires, replicating the recorded baseline behaviour. With a
    policy, detection runs on the beacon rows (default quorum rule unless
    ``rule`` is given), each policy row shuts down planned at the policy's
    cumulative delay after detection, and an emergency stop occurs only if
    the storm arrives while the turbine is still running. Policy execution
    uses the policy's mean delays; no exploration noise is applied.
    """
    arrivals_rng = np.random.default_rng(seed)
    arrivals = _draw_row_arrivals(scenario, layout, arrivals_rng)
    horizon = int(scenario.horizon)

    traces: dict[TurbineId, np.ndarray] = {}
    alarms: list[tuple[int, TurbineId]] = []
    t = np.arange(horizon)
    storm_level = scenario.alarm_threshold + STORM_MARGIN_MS
    for tid in layout.turbines():
        arrival = arrivals[tid.row - 1]
        noise = arrivals_rng.normal(0.0, scenario.gust_noise_std, size=horizon)
        base = np.where(t >= math.ceil(arrival), storm_level, BASE_WIND_MS)
        wind = base + noise
        traces[tid] = wind
        above = wind > scenario.alarm_threshold
        if above.any():
            alarms.append((int(np.argmax(above)), tid))

    alarms.sort(key=lambda item: (item[0], item[1]))
    log = EventLog(alarms=list(alarms))

    t_detect = None
    planned_at: dict[int, int] = {}
    if policy is not None:
        from .controller import DetectionRule, detect_event

        if rule is None:
            rule = DetectionRule()
        t_detect = detect_event(alarms, rule)
        if t_detect is not None:
            cum = 0.0
            for row in sorted(policy.theta):
                cum += max(0.0, policy.theta[row])
                # first second the row is no longer producing
                planned_at[row] = t_detect + int(math.floor(cum)) + 1

    first_alarm = log.first_alarms()
    for tid in layout.turbines():
        alarm_t = first_alarm.get(tid)
        stop_planned = planned_at.get(tid.row)
        if stop_planned is None:
            if alarm_t is not None:
                log.shutdowns.append((alarm_t, tid, KIND_EMERGENCY))
            continue
        if alarm_t is not None and alarm_t < stop_planned:
            log.shutdowns.append((alarm_t, tid, KIND_EMERGENCY))
        elif 0 <= stop_planned <= horizon:
            log.shutdowns.append((stop_planned, tid, KIND_PLANNED))

    log.shutdowns.sort(key=lambda item: (item[0], item[1]))
    return SimulationResult(log=log, traces=traces, arrivals=arrivals, t_detect=t_detect)


def count_emergency_stops(log: EventLog, layout: FarmLayout | None = None) -> dict[int, int]:
    """Emergency shutdowns tallied by row; zero rows included when a layout is given."""
    counts: dict[int, int] = {}
    if layout is not None:
        counts = {row: 0 for row in range(1, layout.rows + 1)}
    for _, tid, kind in log.shutdowns:
        if kind == KIND_EMERGENCY:
            counts[tid.row] = counts.get(tid.row, 0) + 1
    return counts


def alarm_timestamp_grid(log: EventLog, layout: FarmLayout) -> np.ndarray:
    """First-alarm time per grid cell; NaN where missing or never alarmed."""
    grid = np.full((layout.rows, layout.columns), np.nan)
    first = log.first_alarms()
    for tid, t in first.items():
        grid[tid.row - 1, tid.column - 1] = t
    return grid


def label_grid(labels: Mapping, layout: FarmLayout, absent: int = -1) -> np.ndarray:
    """Arrange per-turbine labels on the farm grid, absent cells marked."""
    grid = np.full((layout.rows, layout.columns), absent, dtype=int)
    for tid, lbl in labels.items():
        grid[tid.row - 1, tid.column - 1] = int(lbl)
    return grid


def save_event_log(log: EventLog, path: str | Path):
    """Write the event CSV: ``timestamp,turbine,event``."""
    events = [(t, tid, EVENT_ALARM) for t, tid in log.alarms]
    for t, tid, kind in log.shutdowns:
        events.append((t, tid, EVENT_PLANNED if kind == KIND_PLANNED else EVENT_EMERGENCY))
    events.sort(key=lambda item: (item[0], item[1], item[2]))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["timestamp", "turbine", "event"])
        for t, tid, event in events:
            writer.writerow([t, str(tid), event])


def load_event_log(path: str | Path) -> EventLog:
    """Read an event CSV written by ``save_event_log``."""
    log = EventLog()
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["timestamp", "turbine", "event"]:
            raise DomainError(f"{path}: not an event log (bad header)")
        for row in reader:
            if not row:
                continue
            t = int(row[0])
            tid = TurbineId.parse(row[1])
            event = row[2]
            if event == EVENT_ALARM:
                log.alarms.append((t, tid))
            elif event == EVENT_PLANNED:
                log.shutdowns.append((t, tid, KIND_PLANNED))
            elif event == EVENT_EMERGENCY:
                log.shutdowns.append((t, tid, KIND_EMERGENCY))
            else:
                raise DomainError(f"{path}: unknown event {event!r}")
    return log


def save_wind_traces(traces: Mapping, path: str | Path):
    """Write 1 Hz wind traces as ``timestamp,turbine,wind_ms`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["timestamp", "turbine", "wind_ms"])
        for tid in sorted(traces):
            for t, wind in enumerate(traces[tid]):
                writer.writerow([t, str(tid), f"{wind:.6f}"])

"""Per-zone load profiles built from 1 Hz power and rotor-speed series.

A load duration distribution (LDD) counts seconds per normalized power
bin; a load revolution distribution (LRD) counts rotor revolutions per
bin. Profiles summarize each zone's pooled series as Gaussian statistics
and carry the wind context they were observed under.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import ZoneAssignment, shapiro_wilk
from .errors import DomainError
from .scada import ScadaRecord, WindVector, farm_wind_vector, normalize

log = logging.getLogger(__name__)

KIND_DURATION = "duration"
KIND_REVOLUTION = "revolution"

DEFAULT_BIN_COUNT = 50
NORMALITY_MAX_SAMPLES = 5000


@dataclass
class LoadHistogram:
    """Counts over uniform normalized-power bins covering [0, 1]."""

    kind: str
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.kind not in (KIND_DURATION, KIND_REVOLUTION):
            raise DomainError(f"unknown histogram kind {self.kind!r}")
        if len(self.counts) != len(self.bin_edges) - 1:
            raise DomainError("counts and bin_edges lengths are inconsistent")
        if np.any(np.asarray(self.counts) < 0):
            raise DomainError("histogram counts must be non-negative")

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))

    def normalized(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise DomainError("cannot normalize an all-zero histogram")
        return np.asarray(self.counts, dtype=float) / total

    def __add__(self, other: "LoadHistogram") -> "LoadHistogram":
        _require_same_binning(self, other)
        return LoadHistogram(
            kind=self.kind,
            bin_edges=self.bin_edges.copy(),
            counts=np.asarray(self.counts) + np.asarray(other.counts),
        )


@dataclass
class LoadProfile:
    """One operational zone's load histograms and Gaussian summary."""

    zone: int
    ldd: LoadHistogram
    lrd: LoadHistogram
    power_mean: float  # normalized
    power_std: float
    rotor_mean: float  # rpm
    rotor_std: float
    wind_context: WindVector
    window: tuple[int, int]  # (start, length)


@dataclass(frozen=True)
class NormalityResult:
    statistic: float
    p_value: float
    passed: bool


def _require_same_binning(a: LoadHistogram, b: LoadHistogram):
    if a.kind != b.kind:
        raise DomainError(f"histogram kinds differ: {a.kind} vs {b.kind}")
    if len(a.bin_edges) != len(b.bin_edges) or not np.array_equal(a.bin_edges, b.bin_edges):
        raise DomainError("histogram binnings differ")


def _bin_indices(values: np.ndarray, bin_count: int) -> np.ndarray:
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise DomainError("values must be normalized to [0, 1] before binning")
    idx = np.floor(values * bin_count).astype(int)
    # exact 1.0 falls into the right-closed final bin
    return np.minimum(idx, bin_count - 1)


def compute_ldd(power_norm, bin_count: int = DEFAULT_BIN_COUNT) -> LoadHistogram:
    """Seconds per normalized power bin; one count per 1 Hz sample."""
    if bin_count < 1:
        raise DomainError(f"bin_count must be >= 1, got {bin_count}")
    values = np.asarray(power_norm, dtype=float).ravel()
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    if values.size == 0:
        return LoadHistogram(KIND_DURATION, edges, np.zeros(bin_count))
    idx = _bin_indices(values, bin_count)
    counts = np.bincount(idx, minlength=bin_count).astype(float)
    return LoadHistogram(KIND_DURATION, edges, counts)


def compute_lrd(power_norm, rotor_rpm, bin_count: int = DEFAULT_BIN_COUNT) -> LoadHistogram:
    """Rotor revolutions per normalized power bin: each second adds rpm/60."""
    if bin_count < 1:
        raise DomainError(f"bin_count must be >= 1, got {bin_count}")
    values = np.asarray(power_norm, dtype=float).ravel()
    rotor = np.asarray(rotor_rpm, dtype=float).ravel()
    if values.shape != rotor.shape:
        raise DomainError(
            f"power and rotor series lengths differ: {values.shape[0]} vs {rotor.shape[0]}"
        )
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    if values.size == 0:
        return LoadHistogram(KIND_REVOLUTION, edges, np.zeros(bin_count))
    idx = _bin_indices(values, bin_count)
    counts = np.bincount(idx, weights=rotor / 60.0, minlength=bin_count)
    return LoadHistogram(KIND_REVOLUTION, edges, counts)


def build_profiles(
    records: Sequence[ScadaRecord],
    assignment: ZoneAssignment,
    bin_count: int = DEFAULT_BIN_COUNT,
    wind_context: WindVector | None = None,
    power_bounds: tuple[float, float] = (0.0, 1.0),
) -> list[LoadProfile]:
    """Pool each zone's 1 Hz records into LDD/LRD histograms and stats.

    Every record's turbine must carry a zone label. Power is normalized
    with ``power_bounds`` before binning; rotor speed stays in rpm. Zones
    that end up with zero samples are dropped with a warning.
    """
    if not records:
        raise DomainError("cannot build profiles from an empty record set")
    per_zone_power: dict[int, list[float]] = {}
    per_zone_rotor: dict[int, list[float]] = {}
    for rec in records:
        label = assignment.labels.get(rec.turbine)
        if label is None:
            raise DomainError(f"turbine {rec.turbine} has no zone assignment")
        per_zone_power.setdefault(label, []).append(rec.power)
        per_zone_rotor.setdefault(label, []).append(rec.rotor_speed)

    if wind_context is None:
        wind_context = farm_wind_vector(records)
    timestamps = [r.timestamp for r in records]
    window = (min(timestamps), max(timestamps) - min(timestamps) + 1)

    profiles = []
    for zone in sorted(set(assignment.labels.values())):
        power = per_zone_power.get(zone)
        if not power:
            log.warning("zone %d has no samples, omitting its profile", zone)
            continue
        power_norm = normalize(np.array(power), *power_bounds)
        rotor = np.array(per_zone_rotor[zone])
        profiles.append(
            LoadProfile(
                zone=zone,
                ldd=compute_ldd(power_norm, bin_count),
                lrd=compute_lrd(power_norm, rotor, bin_count),
                power_mean=float(power_norm.mean()),
                power_std=float(power_norm.std()),
                rotor_mean=float(rotor.mean()),
                rotor_std=float(rotor.std()),
                wind_context=wind_context,
                window=window,
            )
        )
    return profiles


def hellinger(a: LoadHistogram, b: LoadHistogram) -> float:
    """Hellinger distance between two histograms' normalized masses."""
    _require_same_binning(a, b)
    p = a.normalized()
    q = b.normalized()
    bc = float(np.sqrt(p * q).sum())
    return math.sqrt(max(0.0, 1.0 - bc))


def profile_discrepancy(baseline: LoadProfile, observed: LoadHistogram) -> float:
    """Score how far an observed histogram drifted from a zone baseline.

    0 means identical mass placement, 1 disjoint. Large values flag that
    the zone is no longer behaving like its steady-state profile.
    """
    reference = baseline.ldd if observed.kind == KIND_DURATION else baseline.lrd
    return hellinger(reference, observed)


def overlap_coefficient(a: LoadHistogram, b: LoadHistogram) -> float:
    """Shared mass fraction of two histograms (1 = identical support use)."""
    _require_same_binning(a, b)
    return float(np.minimum(a.normalized(), b.normalized()).sum())


def normality_report(
    records: Sequence[ScadaRecord],
    assignment: ZoneAssignment,
    alpha: float = 0.05,
    max_samples: int = NORMALITY_MAX_SAMPLES,
    seed: int = 0,
) -> dict[int, dict[str, NormalityResult]]:
    """Shapiro-Wilk test per zone for the pooled power and rotor series.

    Series beyond ``max_samples`` values are thinned with a deterministic
    stride whose offset derives from ``seed``. A zone parameter passes
    when p > alpha.
    """
    per_zone: dict[int, dict[str, list[float]]] = {}
    for rec in records:
        label = assignment.labels.get(rec.turbine)
        if label is None:
            raise DomainError(f"turbine {rec.turbine} has no zone assignment")
        zone = per_zone.setdefault(label, {"power": [], "rotor": []})
        zone["power"].append(rec.power)
        zone["rotor"].append(rec.rotor_speed)

    report: dict[int, dict[str, NormalityResult]] = {}
    for zone in sorted(per_zone):
        report[zone] = {}
        for param in ("power", "rotor"):
            values = np.asarray(per_zone[zone][param], dtype=float)
            values = _stride_subsample(values, max_samples, seed)
            stat, p = shapiro_wilk(values)
            report[zone][param] = NormalityResult(stat, p, p > alpha)
    return report


def _stride_subsample(values: np.ndarray, max_samples: int, seed: int) -> np.ndarray:
    n = values.shape[0]
    if n <= max_samples:
        return values
    stride = math.ceil(n / max_samples)
    offset = seed % stride
    return values[offset::stride][:max_samples]

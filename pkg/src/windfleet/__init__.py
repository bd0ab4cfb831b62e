"""Wind-farm fleet analytics toolkit.

Extracts operational zones and load profiles from 1 Hz SCADA data,
simulates storm fronts crossing the farm, and trains a preventive
row-based shutdown policy with a Monte-Carlo policy gradient.
"""

__version__ = "0.1.0"

from .scada import FeatureVector, ScadaRecord, TurbineId, WindVector
from .clustering import GaussianComponent, MixtureModel, ZoneAssignment
from .profiles import LoadHistogram, LoadProfile
from .farmsim import EventLog, FarmLayout, StormScenario
from .controller import DetectionRule, RewardConfig, ShutdownPolicy, TrainingConfig

__all__ = [
    "__version__",
    "ScadaRecord",
    "TurbineId",
    "FeatureVector",
    "WindVector",
    "GaussianComponent",
    "MixtureModel",
    "ZoneAssignment",
    "LoadHistogram",
    "LoadProfile",
    "FarmLayout",
    "StormScenario",
    "EventLog",
    "ShutdownPolicy",
    "DetectionRule",
    "RewardConfig",
    "TrainingConfig",
]

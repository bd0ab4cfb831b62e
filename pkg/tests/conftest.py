import numpy as np
import pytest

from windfleet.farmsim import FarmLayout
from windfleet.scada import ScadaRecord, TurbineId


@pytest.fixture
def profile_layout():
    """Layout of the load-profiling case: full grid minus turbine 10/4."""
    return FarmLayout(missing=frozenset({TurbineId(10, 4)}))


@pytest.fixture
def storm_layout():
    """Default storm-case layout (four missing turbines in column 5)."""
    return FarmLayout()


def make_record(t, power=500.0, rotor=12.0, speed=8.2, direction=235.4, row=1, col=1):
    return ScadaRecord(
        timestamp=t,
        turbine=TurbineId(row, col),
        power=power,
        rotor_speed=rotor,
        wind_speed=speed,
        wind_direction=direction,
    )


def record_series(n, start=0, **kwargs):
    return [make_record(start + i, **kwargs) for i in range(n)]


def dyadic_rotor(rng, n):
    """Rotor speeds whose /60 quotient is exactly representable."""
    return 7.5 * rng.integers(0, 9, size=n).astype(float)

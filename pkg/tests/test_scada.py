import math

import numpy as np
import pytest

from conftest import make_record, record_series
from windfleet.errors import ConfigurationError, DomainError, ScadaParseError
from windfleet.scada import (
    CSV_HEADER,
    TurbineId,
    check_steady_state,
    farm_wind_vector,
    normalize,
    parse_scada,
    window_average,
)

HEADER = ",".join(CSV_HEADER)


def csv_bytes(*rows):
    return (HEADER + "\n" + "\n".join(rows) + "\n").encode()


class TestTurbineId:
    def test_format_zero_pads_row(self):
        assert str(TurbineId(10, 4)) == "10/4"
        assert str(TurbineId(3, 2)) == "03/2"

    def test_parse_roundtrip(self):
        assert TurbineId.parse("03/2") == TurbineId(3, 2)
        assert TurbineId.parse("10/4") == TurbineId(10, 4)

    def test_indices_start_at_one(self):
        with pytest.raises(DomainError):
            TurbineId(0, 1)


class TestParse:
    def test_direct_field_mapping(self, profile_layout):
        result = parse_scada(csv_bytes("1388306100,03/2,850.0,14.2,8.1,236.0"), profile_layout)
        assert result.rows_read == 1
        rec = result.records[0]
        assert rec.timestamp == 1388306100
        assert rec.turbine == TurbineId(3, 2)
        assert rec.power == 850.0
        assert rec.rotor_speed == 14.2
        assert rec.wind_speed == 8.1
        assert rec.wind_direction == 236.0

    def test_missing_turbine_row_dropped_and_counted(self, profile_layout):
        result = parse_scada(
            csv_bytes(
                "1388306100,03/2,850.0,14.2,8.1,236.0",
                "1388306100,10/4,700.0,13.0,8.0,235.0",
            ),
            profile_layout,
        )
        assert result.dropped_rows == 1
        assert len(result.records) == 1
        assert result.rows_read == 2

    def test_malformed_numeric_carries_line_number(self, profile_layout):
        with pytest.raises(ScadaParseError) as exc:
            parse_scada(csv_bytes("1388306100,03/2,abc,14.2,8.1,236.0"), profile_layout)
        assert exc.value.line == 2

    def test_unknown_turbine_is_configuration_error(self, profile_layout):
        with pytest.raises(ConfigurationError):
            parse_scada(csv_bytes("1,12/1,1.0,1.0,1.0,1.0"), profile_layout)
        with pytest.raises(ConfigurationError):
            parse_scada(csv_bytes("1,01/9,1.0,1.0,1.0,1.0"), profile_layout)

    def test_bad_header_rejected(self, profile_layout):
        with pytest.raises(ScadaParseError) as exc:
            parse_scada(b"time,turbine,p,r,w,d\n1,01/1,1,1,1,1\n", profile_layout)
        assert exc.value.line == 1

    def test_direction_out_of_range_rejected(self, profile_layout):
        with pytest.raises(ScadaParseError):
            parse_scada(csv_bytes("1,01/1,1.0,1.0,1.0,360.0"), profile_layout)

    def test_negative_power_allowed(self, profile_layout):
        result = parse_scada(csv_bytes("1,01/1,-5.0,0.0,1.0,0.0"), profile_layout)
        assert result.records[0].power == -5.0

    def test_row_count_invariant(self, profile_layout):
        rows = []
        for i in range(30):
            tid = "10/4" if i % 5 == 0 else "02/2"
            rows.append(f"{i},{tid},1.0,1.0,1.0,1.0")
        result = parse_scada(csv_bytes(*rows), profile_layout)
        assert result.dropped_rows + len(result.records) == result.rows_read == 30


class TestWindowAverage:
    def test_constant_series(self):
        out = window_average(record_series(120, power=1.0), 120)
        assert len(out) == 1
        assert out[0].power_mean == 1.0
        assert out[0].window_start == 0
        assert out[0].window_len == 120

    def test_arithmetic_mean(self):
        records = [make_record(i, power=float(i)) for i in range(120)]
        out = window_average(records, 120)
        assert out[0].power_mean == pytest.approx(59.5)

    def test_partial_trailing_window_omitted(self):
        out = window_average(record_series(119), 120)
        assert out == []

    def test_output_count_matches_floor_rule(self):
        rng = np.random.default_rng(0)
        records = []
        expected = 0
        for row in range(1, 5):
            n = int(rng.integers(1, 500))
            expected += n // 120
            records.extend(record_series(n, row=row))
        out = window_average(records, 120)
        assert len(out) == expected

    def test_gap_tolerance_at_90_percent(self):
        # 12 interior seconds missing: still 108 of 120 samples, window kept
        keep = [i for i in range(120) if not 50 <= i < 62]
        out = window_average([make_record(i) for i in keep], 120)
        assert len(out) == 1
        # 13 missing drops below the coverage floor
        keep = [i for i in range(120) if not 50 <= i < 63]
        assert window_average([make_record(i) for i in keep], 120) == []

    def test_empty_input(self):
        assert window_average([], 120) == []

    def test_bad_window_rejected(self):
        with pytest.raises(DomainError):
            window_average([], 0)


class TestFarmWindVector:
    def test_constant_input(self):
        v = farm_wind_vector(record_series(50, speed=8.2, direction=235.4))
        assert v.speed == pytest.approx(8.2)
        assert v.direction == pytest.approx(235.4)
        assert not v.direction_undefined

    def test_circular_mean_across_north(self):
        records = [make_record(0, direction=350.0), make_record(1, direction=10.0)]
        v = farm_wind_vector(records)
        assert v.direction == pytest.approx(0.0, abs=1e-9)

    def test_opposing_directions_flag_undefined(self):
        records = [make_record(0, direction=0.0), make_record(1, direction=180.0)]
        v = farm_wind_vector(records)
        assert v.direction_undefined

    def test_speed_permutation_invariant(self):
        rng = np.random.default_rng(1)
        records = [make_record(i, speed=float(s)) for i, s in enumerate(rng.uniform(0, 20, 40))]
        a = farm_wind_vector(records)
        b = farm_wind_vector(list(reversed(records)))
        assert a.speed == b.speed

    def test_empty_is_domain_error(self):
        with pytest.raises(DomainError):
            farm_wind_vector([])


class TestSteadyState:
    def _steady_records(self):
        records = []
        for t in range(720):
            records.append(make_record(t, speed=8.2, direction=235.4))
        return records

    def test_constant_wind_is_steady(self):
        ok, lo, hi = check_steady_state(self._steady_records(), 600, 120)
        assert ok
        assert lo == hi

    def test_reported_extremes_within_tolerance(self):
        records = self._steady_records()
        records[10] = make_record(10, speed=7.9, direction=235.0)
        records[700] = make_record(700, speed=8.7, direction=235.7)
        ok, lo, hi = check_steady_state(records, 600, 120, speed_tol=0.5, dir_tol=2.0)
        assert ok
        assert (lo.speed, lo.direction) == (7.9, 235.0)
        assert (hi.speed, hi.direction) == (8.7, 235.7)

    def test_speed_step_violates(self):
        records = [
            make_record(t, speed=8.0 if t < 660 else 15.0, direction=235.0) for t in range(720)
        ]
        ok, _, _ = check_steady_state(records, 600, 120)
        assert not ok

    def test_missing_second_is_domain_error(self):
        records = [make_record(t) for t in range(720) if t != 300]
        with pytest.raises(DomainError):
            check_steady_state(records, 600, 120)


class TestNormalize:
    def test_bounds_and_midpoint(self):
        assert normalize(0.0, 0.0, 2000.0) == 0.0
        assert normalize(2000.0, 0.0, 2000.0) == 1.0
        assert normalize(1000.0, 0.0, 2000.0) == 0.5

    def test_clamping(self):
        assert normalize(-10.0, 0.0, 100.0) == 0.0
        assert normalize(150.0, 0.0, 100.0) == 1.0

    def test_monotone(self):
        values = np.linspace(-50, 2200, 97)
        out = normalize(values, 0.0, 2000.0)
        assert np.all(np.diff(out) >= 0)

    def test_idempotent_on_unit_bounds(self):
        values = np.linspace(0, 1, 11)
        assert np.array_equal(normalize(values, 0.0, 1.0), values)

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ConfigurationError):
            normalize(1.0, 5.0, 5.0)

"""Turbine power curve and speed-file ingestion."""

from __future__ import annotations

import numpy as np
import pytest

from mgtrade.wind import PowerCurve, ingest_speeds, power_fraction


class TestPowerFraction:
    def test_zero_below_cut_in(self):
        assert power_fraction(2.0) == 0.0
        assert power_fraction(0.0) == 0.0

    def test_one_at_rated(self):
        assert power_fraction(13.0) == 1.0

    def test_cubic_between(self):
        # (8^3 - 3^3) / (13^3 - 3^3) = 485/2170
        assert power_fraction(8.0) == pytest.approx(485.0 / 2170.0)

    def test_zero_at_and_above_cut_out(self):
        assert power_fraction(25.0) == 0.0
        assert power_fraction(30.0) == 0.0

    def test_just_below_cut_out_still_rated(self):
        assert power_fraction(24.999) == 1.0

    def test_monotone_between_cut_in_and_rated(self):
        v = np.linspace(3.0, 13.0, 200)
        f = power_fraction(v)
        assert np.all(np.diff(f) >= 0.0)

    def test_range_is_unit_interval(self):
        rng = np.random.default_rng(1)
        f = power_fraction(rng.uniform(0.0, 40.0, 1000))
        assert np.all((f >= 0.0) & (f <= 1.0))

    def test_scalar_in_scalar_out(self):
        out = power_fraction(7.0)
        assert isinstance(out, float)

    def test_vector_in_vector_out(self):
        out = power_fraction([3.0, 13.0])
        assert isinstance(out, np.ndarray)
        assert out.shape == (2,)

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            power_fraction(-1.0)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            power_fraction(float("nan"))

    def test_custom_curve(self):
        curve = PowerCurve(cut_in=2.0, rated=10.0, cut_out=20.0)
        assert power_fraction(10.0, curve) == 1.0
        assert power_fraction(20.0, curve) == 0.0
        assert power_fraction(5.0, curve) == pytest.approx((125 - 8) / (1000 - 8))

    def test_curve_ordering_validated(self):
        with pytest.raises(ValueError):
            PowerCurve(cut_in=13.0, rated=3.0, cut_out=25.0)


class TestIngestSpeeds:
    def write_csv(self, tmp_path, text: str):
        path = tmp_path / "speeds.csv"
        path.write_text(text)
        return path

    def test_reads_column(self, tmp_path):
        path = self.write_csv(tmp_path, "hour,speed\n0,3.0\n1,13.0\n2,8.0\n")
        frac = ingest_speeds(path, "speed", 3)
        assert frac == pytest.approx([0.0, 1.0, 485.0 / 2170.0])

    def test_extra_rows_ignored(self, tmp_path):
        path = self.write_csv(tmp_path, "speed\n13.0\n13.0\n99.0\n")
        frac = ingest_speeds(path, "speed", 2)
        assert frac == pytest.approx([1.0, 1.0])

    def test_too_few_rows(self, tmp_path):
        path = self.write_csv(tmp_path, "speed\n5.0\n")
        with pytest.raises(ValueError, match="needed 3 rows"):
            ingest_speeds(path, "speed", 3)

    def test_missing_column(self, tmp_path):
        path = self.write_csv(tmp_path, "wind\n5.0\n")
        with pytest.raises(ValueError, match="missing column"):
            ingest_speeds(path, "speed", 1)

    def test_non_numeric_cell_names_row(self, tmp_path):
        path = self.write_csv(tmp_path, "speed\n5.0\nbad\n")
        with pytest.raises(ValueError, match="row 3"):
            ingest_speeds(path, "speed", 2)

    def test_custom_curve_applies(self, tmp_path):
        path = self.write_csv(tmp_path, "speed\n10.0\n")
        curve = PowerCurve(cut_in=2.0, rated=10.0, cut_out=20.0)
        assert ingest_speeds(path, "speed", 1, curve) == pytest.approx([1.0])

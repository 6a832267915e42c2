import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imbarb.market_data import (
    InsufficientDataError,
    PriceOrderingError,
    PriceParseError,
    SettlementConsistencyError,
    SynthConfig,
    generate_synthetic_prices,
    load_price_csv,
    quartile_thresholds,
    split_dataset,
    write_price_csv,
)
from tests.conftest import series_from_hourly, series_from_minutes


def _write_rows(path, rows, header="timestamp_utc,indicative_price_eur_mwh,settled_price_eur_mwh"):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _day_rows(day, indicative=50.0, settled=50.0, minutes=range(1440)):
    rows = []
    for m in minutes:
        ts = dt.datetime.combine(day, dt.time()) + dt.timedelta(minutes=m)
        rows.append(f"{ts.strftime('%Y-%m-%dT%H:%M:%SZ')},{indicative},{settled}")
    return rows


class TestLoadPriceCsv:
    def test_single_complete_day(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_rows(path, _day_rows(dt.date(2023, 1, 1)))
        series, dropped = load_price_csv(path)
        assert dropped == 0
        assert series.n_days == 1
        assert len(series) == 1440
        assert series.day_index == {dt.date(2023, 1, 1): range(0, 1440)}

    def test_bad_number_names_line_2(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_rows(path, ["2023-01-01T00:00Z,abc,50"])
        with pytest.raises(PriceParseError) as err:
            load_price_csv(path)
        assert err.value.line == 2

    def test_bad_timestamp_names_line(self, tmp_path):
        path = tmp_path / "prices.csv"
        rows = _day_rows(dt.date(2023, 1, 1), minutes=range(3))
        rows[2] = "not-a-time,1,1"
        _write_rows(path, rows)
        with pytest.raises(PriceParseError) as err:
            load_price_csv(path)
        assert err.value.line == 4

    def test_incomplete_day_dropped_with_count(self, tmp_path):
        path = tmp_path / "prices.csv"
        rows = _day_rows(dt.date(2023, 1, 1))
        rows += _day_rows(dt.date(2023, 1, 2), minutes=range(1439))
        _write_rows(path, rows)
        series, dropped = load_price_csv(path)
        assert series.n_days == 1
        assert dropped == 1
        assert series.days == (dt.date(2023, 1, 1),)

    def test_non_monotone_timestamps(self, tmp_path):
        path = tmp_path / "prices.csv"
        rows = _day_rows(dt.date(2023, 1, 1), minutes=[0, 2, 1])
        _write_rows(path, rows)
        with pytest.raises(PriceOrderingError):
            load_price_csv(path)

    def test_settled_inconsistent_within_quarter_hour(self, tmp_path):
        path = tmp_path / "prices.csv"
        rows = _day_rows(dt.date(2023, 1, 1))
        ts = "2023-01-01T00:07:00Z"
        rows[7] = f"{ts},50.0,51.0"
        _write_rows(path, rows)
        with pytest.raises(SettlementConsistencyError):
            load_price_csv(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "prices.csv"
        _write_rows(path, _day_rows(dt.date(2023, 1, 1)), header="time,price,settle")
        with pytest.raises(PriceParseError) as err:
            load_price_csv(path)
        assert err.value.line == 1

    def test_roundtrip_through_csv(self, tmp_path, synth_series):
        path = tmp_path / "out.csv"
        write_price_csv(synth_series, path)
        loaded, dropped = load_price_csv(path)
        assert dropped == 0
        assert loaded.days == synth_series.days
        np.testing.assert_array_equal(loaded.indicative_all, synth_series.indicative_all)
        np.testing.assert_array_equal(loaded.settled_all, synth_series.settled_all)


class TestSplitDataset:
    def _month_series(self):
        days = 31
        hourly = np.tile(np.linspace(10, 100, 24), (days, 1))
        return series_from_hourly(hourly, start=dt.date(2023, 3, 1))

    def test_paper_split_days(self):
        split = split_dataset(self._month_series())
        assert dt.date(2023, 3, 5) in split.train
        assert dt.date(2023, 3, 23) in split.validation
        assert dt.date(2023, 3, 28) in split.test

    def test_split_is_partition(self):
        series = self._month_series()
        split = split_dataset(series)
        together = sorted(split.train.days + split.validation.days + split.test.days)
        assert together == sorted(series.days)
        assert split.train.n_days == 20
        assert split.validation.n_days == 5
        assert split.test.n_days == 6

    def test_empty_series_rejected(self, synth_series):
        empty = synth_series.subset([])
        with pytest.raises(ValueError):
            split_dataset(empty)


class TestQuartileThresholds:
    def test_linear_interpolation_rule(self):
        # settled prices 1..8, one value per pair of quarter hours across a day
        settled = np.repeat(np.arange(1.0, 9.0), 180)
        series = series_from_minutes(settled[None, :], settled_days=settled[None, :])
        thresholds = quartile_thresholds(series)
        assert thresholds.lower == pytest.approx(2.75, abs=1e-12)
        assert thresholds.upper == pytest.approx(6.25, abs=1e-12)

    def test_constant_prices(self):
        series = series_from_hourly(np.full((1, 24), 100.0))
        thresholds = quartile_thresholds(series)
        assert (thresholds.lower, thresholds.upper) == (100.0, 100.0)

    def test_insufficient_data(self, synth_series):
        with pytest.raises(InsufficientDataError):
            quartile_thresholds(synth_series.subset([]))

    @given(st.lists(st.floats(-500, 2000), min_size=96, max_size=96), st.randoms())
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, qh_prices, rnd):
        shuffled = list(qh_prices)
        rnd.shuffle(shuffled)
        a = series_from_minutes(np.repeat(qh_prices, 15)[None, :], settled_days=np.repeat(qh_prices, 15)[None, :])
        b = series_from_minutes(np.repeat(shuffled, 15)[None, :], settled_days=np.repeat(shuffled, 15)[None, :])
        ta, tb = quartile_thresholds(a), quartile_thresholds(b)
        assert ta.lower == pytest.approx(tb.lower, abs=1e-9)
        assert ta.upper == pytest.approx(tb.upper, abs=1e-9)

    def test_upper_monotone_in_high_sample(self):
        base = np.linspace(0, 100, 96)
        higher = base.copy()
        higher[-1] = 500.0  # push one sample above Q3
        sa = series_from_minutes(np.repeat(base, 15)[None, :], settled_days=np.repeat(base, 15)[None, :])
        sb = series_from_minutes(np.repeat(higher, 15)[None, :], settled_days=np.repeat(higher, 15)[None, :])
        assert quartile_thresholds(sb).upper >= quartile_thresholds(sa).upper


class TestSyntheticPrices:
    def test_deterministic_per_seed(self):
        config = SynthConfig(days=2)
        a = generate_synthetic_prices(config, seed=7)
        b = generate_synthetic_prices(config, seed=7)
        np.testing.assert_array_equal(a.indicative_all, b.indicative_all)
        np.testing.assert_array_equal(a.settled_all, b.settled_all)

    def test_different_seeds_differ(self):
        config = SynthConfig(days=2)
        a = generate_synthetic_prices(config, seed=7)
        b = generate_synthetic_prices(config, seed=8)
        assert not np.array_equal(a.indicative_all, b.indicative_all)

    def test_degenerate_config_constant(self):
        config = SynthConfig(days=1, level=42.0, noise_scale=0.0, spike_prob=0.0)
        series = generate_synthetic_prices(config, seed=7)
        np.testing.assert_allclose(series.indicative_all, 42.0, atol=1e-12)
        np.testing.assert_allclose(series.settled_all, 42.0, atol=1e-12)

    def test_spike_fraction_near_probability(self):
        config = SynthConfig(days=30, spike_prob=0.01, noise_scale=3.0, spike_magnitude=(350, 1400))
        series = generate_synthetic_prices(config, seed=7)
        # spikes dwarf the base noise, so count large deviations from the level
        deviations = np.abs(series.indicative_all.ravel() - config.level)
        fraction = float((deviations > 200.0).mean())
        assert 0.002 <= fraction <= 0.03

    def test_settled_is_quarter_hour_mean(self):
        series = generate_synthetic_prices(SynthConfig(days=1), seed=3)
        ind = series.indicative_all.reshape(1, 96, 15)
        np.testing.assert_allclose(series.settled_all.reshape(1, 96, 15)[..., 0], ind.mean(axis=2))

    def test_nonpositive_days_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(days=0)


class TestPriceSeries:
    def test_settled_constant_within_quarter_hours(self, synth_series):
        settled = synth_series.settled_all.reshape(synth_series.n_days, 96, 15)
        assert (settled == settled[:, :, :1]).all()

    def test_record_accessor(self, synth_series):
        rec = synth_series.record(1441)
        assert rec.timestamp.date() == synth_series.days[1]
        assert rec.timestamp.minute == 1
        assert rec.indicative_price == synth_series.indicative(synth_series.days[1])[1]

    def test_immutable(self, synth_series):
        with pytest.raises(ValueError):
            synth_series.indicative_all[0, 0] = 1.0

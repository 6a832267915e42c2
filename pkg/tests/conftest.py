import datetime as dt

import numpy as np
import pytest

from imbarb.market_data import MINUTES_PER_DAY, PriceSeries, SynthConfig, generate_synthetic_prices


def series_from_minutes(indicative_days, start=dt.date(2023, 1, 1), settled_days=None):
    """Build a PriceSeries from per-day minute arrays.

    Settled prices default to the quarter-hour means of the indicative
    minutes, repeated across each quarter hour.
    """
    indicative = np.asarray(indicative_days, dtype=np.float64)
    if indicative.ndim == 1:
        indicative = indicative[None, :]
    n_days = indicative.shape[0]
    assert indicative.shape[1] == MINUTES_PER_DAY
    if settled_days is None:
        settled = indicative.reshape(n_days, 96, 15).mean(axis=2)
        settled = np.repeat(settled, 15, axis=1)
    else:
        settled = np.asarray(settled_days, dtype=np.float64)
        if settled.ndim == 1:
            settled = settled[None, :]
    days = [start + dt.timedelta(days=i) for i in range(n_days)]
    return PriceSeries(days, indicative, settled)


def series_from_hourly(hourly_days, start=dt.date(2023, 1, 1)):
    """Each day is 24 hourly prices held constant over the hour's minutes."""
    hourly = np.asarray(hourly_days, dtype=np.float64)
    if hourly.ndim == 1:
        hourly = hourly[None, :]
    assert hourly.shape[1] == 24
    minutes = np.repeat(hourly, 60, axis=1)
    return series_from_minutes(minutes, start=start)


@pytest.fixture(scope="session")
def synth_series():
    return generate_synthetic_prices(SynthConfig(days=3, spike_prob=0.02), seed=11)

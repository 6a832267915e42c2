"""Imbalance-price series: ingestion, validation, splits, and synthesis.

A price series carries one-minute indicative prices together with the
quarter-hour settled price repeated on each of its 15 minutes.  Days are the
unit of everything downstream (episodes, backtests), so incomplete days are
dropped at load time and the in-memory layout is day-major.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

MINUTES_PER_DAY = 1440
MINUTES_PER_QH = 15
QH_PER_DAY = MINUTES_PER_DAY // MINUTES_PER_QH

CSV_HEADER = ("timestamp_utc", "indicative_price_eur_mwh", "settled_price_eur_mwh")


class MarketDataError(Exception):
    """Base class for price-data failures."""


class PriceParseError(MarketDataError):
    """A CSV cell could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PriceOrderingError(MarketDataError):
    """Timestamps are not strictly increasing."""


class SettlementConsistencyError(MarketDataError):
    """Settled price differs across the minutes of one quarter hour."""


class InsufficientDataError(MarketDataError):
    """Not enough samples for the requested statistic."""


@dataclass(frozen=True)
class PriceRecord:
    """One minute of market data."""

    timestamp: dt.datetime
    indicative_price: float
    settled_price: float


@dataclass(frozen=True)
class RbcThresholds:
    """Charge-below / discharge-above price cutoffs for the rule-based controller."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower threshold {self.lower} exceeds upper {self.upper}")


class PriceSeries:
    """Immutable day-major price table.

    ``indicative`` and ``settled`` are ``(n_days, 1440)`` float64 arrays whose
    rows line up with ``days``.  All arrays are read-only after construction;
    instances are safe to share across threads.
    """

    def __init__(self, days: Sequence[dt.date], indicative: np.ndarray, settled: np.ndarray):
        days = tuple(days)
        indicative = np.ascontiguousarray(indicative, dtype=np.float64)
        settled = np.ascontiguousarray(settled, dtype=np.float64)
        if indicative.shape != (len(days), MINUTES_PER_DAY) or settled.shape != indicative.shape:
            raise ValueError("price arrays must have shape (n_days, 1440)")
        if len(set(days)) != len(days):
            raise ValueError("duplicate days")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("days must be strictly increasing")
        if not (np.isfinite(indicative).all() and np.isfinite(settled).all()):
            raise ValueError("prices must be finite")
        per_qh = settled.reshape(len(days), QH_PER_DAY, MINUTES_PER_QH)
        if len(days) and not (per_qh == per_qh[:, :, :1]).all():
            day_idx, qh_idx = np.argwhere((per_qh != per_qh[:, :, :1]).any(axis=2))[0]
            raise SettlementConsistencyError(
                f"settled price varies within quarter hour {qh_idx} of {days[day_idx]}"
            )
        indicative.flags.writeable = False
        settled.flags.writeable = False
        self._days = days
        self._indicative = indicative
        self._settled = settled
        self._day_row = {d: i for i, d in enumerate(days)}

    @property
    def days(self) -> tuple[dt.date, ...]:
        return self._days

    @property
    def n_days(self) -> int:
        return len(self._days)

    @property
    def day_index(self) -> dict[dt.date, range]:
        """Map from day to the range of flat record indices it covers."""
        return {
            d: range(i * MINUTES_PER_DAY, (i + 1) * MINUTES_PER_DAY)
            for i, d in enumerate(self._days)
        }

    def __len__(self) -> int:
        return self.n_days * MINUTES_PER_DAY

    def __contains__(self, day: dt.date) -> bool:
        return day in self._day_row

    def indicative(self, day: dt.date) -> np.ndarray:
        return self._indicative[self._row(day)]

    def settled(self, day: dt.date) -> np.ndarray:
        return self._settled[self._row(day)]

    @property
    def indicative_all(self) -> np.ndarray:
        return self._indicative

    @property
    def settled_all(self) -> np.ndarray:
        return self._settled

    def record(self, index: int) -> PriceRecord:
        if not 0 <= index < len(self):
            raise IndexError(index)
        day, minute = divmod(index, MINUTES_PER_DAY)
        ts = dt.datetime.combine(self._days[day], dt.time(), tzinfo=dt.timezone.utc)
        ts += dt.timedelta(minutes=minute)
        return PriceRecord(ts, float(self._indicative[day, minute]), float(self._settled[day, minute]))

    def iter_records(self) -> Iterator[PriceRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def settled_per_qh(self) -> np.ndarray:
        """One settled-price sample per quarter hour, day order."""
        return self._settled[:, ::MINUTES_PER_QH].ravel()

    def subset(self, days: Sequence[dt.date]) -> "PriceSeries":
        rows = [self._row(d) for d in days]
        return PriceSeries(days, self._indicative[rows], self._settled[rows])

    def _row(self, day: dt.date) -> int:
        try:
            return self._day_row[day]
        except KeyError:
            raise KeyError(f"day {day} not in series") from None


@dataclass(frozen=True)
class DatasetSplit:
    """Calendar split: days 1-20 of each month train, 21-25 validate, rest test."""

    train: PriceSeries
    validation: PriceSeries
    test: PriceSeries


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic price generator settings.

    The base process mean-reverts to ``level``; each minute independently
    spikes with probability ``spike_prob`` by a magnitude drawn uniformly
    from ``spike_magnitude``, with either sign.
    """

    days: int
    level: float = 80.0
    reversion_rate: float = 0.02
    noise_scale: float = 3.0
    spike_prob: float = 0.01
    spike_magnitude: tuple[float, float] = (350.0, 1400.0)
    start_date: dt.date = dt.date(2023, 1, 1)

    def __post_init__(self):
        if self.days <= 0:
            raise ValueError("day count must be positive")
        if not 0.0 <= self.reversion_rate <= 1.0:
            raise ValueError("reversion_rate must lie in [0, 1]")
        if self.noise_scale < 0 or self.spike_prob < 0 or self.spike_prob > 1:
            raise ValueError("invalid noise or spike probability")
        lo, hi = self.spike_magnitude
        if lo < 0 or hi < lo:
            raise ValueError("spike_magnitude must be 0 <= lo <= hi")


def _parse_timestamp(text: str, line: int) -> dt.datetime:
    raw = text.strip()
    try:
        ts = dt.datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise PriceParseError(line, f"bad timestamp {text!r}") from None
    if ts.tzinfo is not None:
        if ts.utcoffset() != dt.timedelta(0):
            raise PriceParseError(line, f"timestamp {text!r} is not UTC")
        ts = ts.replace(tzinfo=None)
    if ts.second or ts.microsecond:
        raise PriceParseError(line, f"timestamp {text!r} is not minute-aligned")
    return ts


def _parse_price(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise PriceParseError(line, f"bad number {text!r}") from None
    if not np.isfinite(value):
        raise PriceParseError(line, f"non-finite price {text!r}")
    return value


def load_price_csv(path) -> tuple[PriceSeries, int]:
    """Load and validate a price CSV.

    Returns the validated series together with the number of incomplete days
    that were dropped.  Raises :class:`PriceParseError`,
    :class:`PriceOrderingError`, or :class:`SettlementConsistencyError` on
    malformed input.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceParseError(1, "empty file") from None
        if [h.strip() for h in header] != list(CSV_HEADER):
            raise PriceParseError(1, f"expected header {','.join(CSV_HEADER)}")
        stamps: list[dt.datetime] = []
        indicative: list[float] = []
        settled: list[float] = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise PriceParseError(line, f"expected 3 fields, got {len(row)}")
            ts = _parse_timestamp(row[0], line)
            if stamps and ts <= stamps[-1]:
                raise PriceOrderingError(
                    f"line {line}: timestamp {ts} does not increase past {stamps[-1]}"
                )
            stamps.append(ts)
            indicative.append(_parse_price(row[1], line))
            settled.append(_parse_price(row[2], line))

    by_day: dict[dt.date, list[int]] = {}
    for i, ts in enumerate(stamps):
        by_day.setdefault(ts.date(), []).append(i)

    kept_days = [d for d in sorted(by_day) if len(by_day[d]) == MINUTES_PER_DAY]
    dropped = len(by_day) - len(kept_days)
    ind = np.empty((len(kept_days), MINUTES_PER_DAY))
    stl = np.empty_like(ind)
    for r, day in enumerate(kept_days):
        rows = by_day[day]
        minutes = [stamps[i].hour * 60 + stamps[i].minute for i in rows]
        if minutes != list(range(MINUTES_PER_DAY)):
            # strict global ordering makes this unreachable, kept as a guard
            raise PriceOrderingError(f"day {day}: minutes are not contiguous")
        ind[r] = [indicative[i] for i in rows]
        stl[r] = [settled[i] for i in rows]
    return PriceSeries(kept_days, ind, stl), dropped


def write_price_csv(series: PriceSeries, path) -> None:
    """Write a series in the same CSV schema :func:`load_price_csv` reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for day in series.days:
            ind = series.indicative(day)
            stl = series.settled(day)
            base = dt.datetime.combine(day, dt.time())
            for minute in range(MINUTES_PER_DAY):
                ts = base + dt.timedelta(minutes=minute)
                writer.writerow([ts.strftime("%Y-%m-%dT%H:%M:%SZ"), repr(float(ind[minute])), repr(float(stl[minute]))])


def split_dataset(series: PriceSeries) -> DatasetSplit:
    """Partition by day-of-month: 1-20 train, 21-25 validation, 26+ test."""
    if series.n_days == 0:
        raise ValueError("cannot split an empty series")
    train = [d for d in series.days if d.day <= 20]
    validation = [d for d in series.days if 21 <= d.day <= 25]
    test = [d for d in series.days if d.day >= 26]
    return DatasetSplit(
        train=series.subset(train),
        validation=series.subset(validation),
        test=series.subset(test),
    )


def quartile_thresholds(series: PriceSeries) -> RbcThresholds:
    """First and third quartiles of the per-quarter-hour settled prices.

    Quantiles use linear interpolation between order statistics (position
    ``(n - 1) * q``).
    """
    samples = series.settled_per_qh()
    if samples.size < 4:
        raise InsufficientDataError(
            f"need at least 4 quarter-hour samples, got {samples.size}"
        )
    lower, upper = np.quantile(samples, [0.25, 0.75], method="linear")
    return RbcThresholds(lower=float(lower), upper=float(upper))


def generate_synthetic_prices(config: SynthConfig, seed: int) -> PriceSeries:
    """Deterministic mean-reverting minute prices with rare two-sided spikes.

    The settled price of each quarter hour is the mean of its 15 indicative
    minute prices.  Identical seeds reproduce the series bit for bit.
    """
    rng = np.random.default_rng(seed)
    n = config.days * MINUTES_PER_DAY
    noise = rng.standard_normal(n) * config.noise_scale
    spike_mask = rng.random(n) < config.spike_prob
    spike_sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    lo, hi = config.spike_magnitude
    spike_mag = rng.uniform(lo, hi, n)

    base = np.empty(n)
    x = config.level
    k = config.reversion_rate
    for t in range(n):
        base[t] = x
        x = x + k * (config.level - x) + noise[t]

    indicative = base + spike_mask * spike_sign * spike_mag
    indicative = indicative.reshape(config.days, MINUTES_PER_DAY)
    settled = indicative.reshape(config.days, QH_PER_DAY, MINUTES_PER_QH).mean(axis=2)
    settled = np.repeat(settled, MINUTES_PER_QH, axis=1)
    days = [config.start_date + dt.timedelta(days=i) for i in range(config.days)]
    return PriceSeries(days, indicative, settled)

"""Battery MDP: one episode per calendar day on minute-resolution prices.

The agent observes the clock, its state of charge, and the current indicative
imbalance price; rewards settle against the quarter hour's final price.  The
controller acts every ``step_minutes`` minutes on an hour-aligned grid, so a
day is exactly ``1440 / step_minutes`` steps.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from imbarb.market_data import MINUTES_PER_DAY, MINUTES_PER_QH, PriceSeries


class Action(IntEnum):
    """Discrete power setpoints, ordered by signed power."""

    DISCHARGE = 0
    IDLE = 1
    CHARGE = 2


@dataclass(frozen=True)
class BatteryParams:
    """Physical battery constants plus the control-step duration.

    ``reward_dt_scaling`` converts step rewards from instantaneous power *
    price to energy * price (EUR); switching it off keeps the literal
    power-times-price form for fidelity experiments.
    """

    capacity_mwh: float = 8.0
    p_max_mw: float = 4.0
    eta_charge: float = math.sqrt(0.9)
    eta_discharge: float = math.sqrt(0.9)
    soc_min: float = 0.10
    soc_max: float = 1.0
    step_minutes: int = 2
    reward_dt_scaling: bool = True

    def __post_init__(self):
        if not 0.0 < self.eta_charge <= 1.0 or not 0.0 < self.eta_discharge <= 1.0:
            raise ValueError("efficiencies must lie in (0, 1]")
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if self.p_max_mw <= 0 or self.capacity_mwh <= 0:
            raise ValueError("power and capacity must be positive")
        if self.step_minutes <= 0 or 60 % self.step_minutes != 0:
            raise ValueError("step_minutes must divide 60")

    @property
    def step_hours(self) -> float:
        return self.step_minutes / 60.0

    @property
    def steps_per_day(self) -> int:
        return MINUTES_PER_DAY // self.step_minutes

    def power(self, action: int) -> float:
        """Signed power in MW for an action index."""
        return (-self.p_max_mw, 0.0, self.p_max_mw)[action]


@dataclass(frozen=True)
class EnvState:
    """Observation tuple: clock fields, state of charge, indicative price."""

    minute_of_qh: int
    qh_of_day: int
    month: int
    soc: float
    indicative_price: float


@dataclass(frozen=True)
class Transition:
    """Replay-buffer record."""

    state: EnvState
    action: Action
    reward: float
    next_state: EnvState
    done: bool


@dataclass(frozen=True)
class StateBatch:
    """Column-oriented batch of observations for vectorised policy queries."""

    minute_of_qh: np.ndarray
    qh_of_day: np.ndarray
    month: np.ndarray
    soc: np.ndarray
    indicative_price: np.ndarray

    def __post_init__(self):
        n = len(self.soc)
        for name in ("minute_of_qh", "qh_of_day", "month", "indicative_price"):
            if len(getattr(self, name)) != n:
                raise ValueError("state batch columns must have equal length")

    @classmethod
    def from_states(cls, states) -> "StateBatch":
        return cls(
            minute_of_qh=np.array([s.minute_of_qh for s in states], dtype=np.int64),
            qh_of_day=np.array([s.qh_of_day for s in states], dtype=np.int64),
            month=np.array([s.month for s in states], dtype=np.int64),
            soc=np.array([s.soc for s in states], dtype=np.float64),
            indicative_price=np.array([s.indicative_price for s in states], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.soc)

    def state(self, i: int) -> EnvState:
        return EnvState(
            minute_of_qh=int(self.minute_of_qh[i]),
            qh_of_day=int(self.qh_of_day[i]),
            month=int(self.month[i]),
            soc=float(self.soc[i]),
            indicative_price=float(self.indicative_price[i]),
        )

    def subset(self, idx) -> "StateBatch":
        return StateBatch(
            minute_of_qh=self.minute_of_qh[idx],
            qh_of_day=self.qh_of_day[idx],
            month=self.month[idx],
            soc=self.soc[idx],
            indicative_price=self.indicative_price[idx],
        )

    def features(self, norm: NormStats) -> np.ndarray:
        return encode_features(
            self.minute_of_qh, self.qh_of_day, self.month, self.soc, self.indicative_price, norm
        )


def concat_state_batches(batches) -> StateBatch:
    return StateBatch(
        minute_of_qh=np.concatenate([b.minute_of_qh for b in batches]),
        qh_of_day=np.concatenate([b.qh_of_day for b in batches]),
        month=np.concatenate([b.month for b in batches]),
        soc=np.concatenate([b.soc for b in batches]),
        indicative_price=np.concatenate([b.indicative_price for b in batches]),
    )


@dataclass(frozen=True)
class NormStats:
    """Price standardisation constants, frozen from the training split."""

    price_mean: float
    price_std: float

    @classmethod
    def from_series(cls, series: PriceSeries) -> "NormStats":
        prices = series.indicative_all
        return cls(price_mean=float(prices.mean()), price_std=float(prices.std()))


def soc_transition(soc: float, action: int, params: BatteryParams) -> float:
    """Next state of charge after one control step, clipped to the SoC band."""
    p = params.power(action)
    delta = (max(p, 0.0) * params.eta_charge + min(p, 0.0) / params.eta_discharge)
    nxt = soc + delta * params.step_hours / params.capacity_mwh
    return min(max(nxt, params.soc_min), params.soc_max)


def step_reward(action: int, settled_price: float, params: BatteryParams) -> float:
    """Negative energy cost of the step at the settled price."""
    r = -params.power(action) * settled_price
    if params.reward_dt_scaling:
        r *= params.step_hours
    return r


def encode_state(state: EnvState, norm: NormStats) -> np.ndarray:
    """Length-5 feature vector: min-max scaled clock, raw SoC, z-scored price."""
    return encode_features(
        np.array([state.minute_of_qh], dtype=np.float64),
        np.array([state.qh_of_day], dtype=np.float64),
        np.array([state.month], dtype=np.float64),
        np.array([state.soc]),
        np.array([state.indicative_price]),
        norm,
    )[0]


def encode_features(
    minute_of_qh: np.ndarray,
    qh_of_day: np.ndarray,
    month: np.ndarray,
    soc: np.ndarray,
    price: np.ndarray,
    norm: NormStats,
) -> np.ndarray:
    """Vectorised :func:`encode_state` over parallel arrays -> (n, 5)."""
    if norm.price_std == 0.0:
        raise ValueError("price standard deviation is zero; cannot standardise")
    out = np.empty((len(soc), 5))
    out[:, 0] = np.asarray(minute_of_qh, dtype=np.float64) / (MINUTES_PER_QH - 1)
    out[:, 1] = np.asarray(qh_of_day, dtype=np.float64) / 95.0
    out[:, 2] = (np.asarray(month, dtype=np.float64) - 1.0) / 11.0
    out[:, 3] = soc
    out[:, 4] = (np.asarray(price, dtype=np.float64) - norm.price_mean) / norm.price_std
    return out


class BatteryEnv:
    """Stateful single-episode environment over an immutable price series.

    One instance runs one episode at a time; run several instances for
    concurrent rollouts over the same series.
    """

    def __init__(self, series: PriceSeries, params: BatteryParams):
        self.series = series
        self.params = params
        self._day: dt.date | None = None
        self._indicative: np.ndarray | None = None
        self._settled: np.ndarray | None = None
        self._soc = 0.0
        self._step_index = 0
        self._done = True

    def reset(self, day: dt.date, initial_soc: float = 0.5) -> EnvState:
        if day not in self.series:
            raise KeyError(f"day {day} not in series")
        if not self.params.soc_min <= initial_soc <= self.params.soc_max:
            raise ValueError(
                f"initial_soc {initial_soc} outside [{self.params.soc_min}, {self.params.soc_max}]"
            )
        self._day = day
        self._indicative = self.series.indicative(day)
        self._settled = self.series.settled(day)
        self._soc = initial_soc
        self._step_index = 0
        self._done = False
        return self._observe()

    def step(self, action: int) -> tuple[EnvState, float, bool]:
        """Apply an action; returns (next_state, reward in EUR, done).

        The reward settles at the quarter hour containing the step's start
        minute.  The terminal next_state wraps the clock to the next day's
        first slot (it is never bootstrapped).
        """
        if self._done:
            raise RuntimeError("episode is done; call reset() first")
        reward = step_reward(action, float(self._settled[self._minute()]), self.params)
        self._soc = soc_transition(self._soc, action, self.params)
        self._step_index += 1
        self._done = self._step_index >= self.params.steps_per_day
        return self._observe(), reward, self._done

    @property
    def soc(self) -> float:
        return self._soc

    @property
    def day(self) -> dt.date | None:
        return self._day

    def _minute(self) -> int:
        return self._step_index * self.params.step_minutes

    def _observe(self) -> EnvState:
        minute = self._minute() % MINUTES_PER_DAY
        price_minute = minute if not self._done else MINUTES_PER_DAY - 1
        return EnvState(
            minute_of_qh=minute % MINUTES_PER_QH,
            qh_of_day=minute // MINUTES_PER_QH,
            month=self._day.month,
            soc=self._soc,
            indicative_price=float(self._indicative[price_minute]),
        )

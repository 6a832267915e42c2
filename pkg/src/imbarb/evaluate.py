"""Backtesting and reporting: profit tables, heatmaps, histograms, day traces.

All outputs are plain CSV tables; plotting stays out of scope.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from imbarb.battery_env import BatteryEnv, BatteryParams, StateBatch
from imbarb.correction.verify import GridSpec
from imbarb.market_data import MINUTES_PER_QH, PriceSeries


@dataclass(frozen=True)
class DayResult:
    day: dt.date
    profit: float
    final_soc: float


@dataclass(frozen=True)
class ProfitReport:
    """Backtest outcome; the headline figure is EUR per day per MWh capacity."""

    total_profit: float
    day_count: int
    capacity_mwh: float
    per_day: tuple[DayResult, ...]

    @property
    def profit_per_day_per_mwh(self) -> float:
        return self.total_profit / self.day_count / self.capacity_mwh

    @property
    def final_socs(self) -> tuple[float, ...]:
        return tuple(d.final_soc for d in self.per_day)


def _act(controller, state) -> int:
    batch = StateBatch.from_states([state])
    return int(controller.act_batch(batch)[0])


def backtest(
    controller,
    series: PriceSeries,
    params: BatteryParams,
    initial_soc: float = 0.5,
    carry_soc: bool = False,
) -> ProfitReport:
    """Greedy rollout over every day of the series, no exploration.

    SoC resets to ``initial_soc`` between days unless ``carry_soc`` keeps the
    previous day's final state of charge.  Deterministic.
    """
    if series.n_days == 0:
        raise ValueError("cannot backtest an empty series")
    env = BatteryEnv(series, params)
    results = []
    total = 0.0
    soc = initial_soc
    for day in series.days:
        state = env.reset(day, soc if carry_soc else initial_soc)
        day_profit = 0.0
        done = False
        while not done:
            state, reward, done = env.step(_act(controller, state))
            day_profit += reward
        soc = env.soc
        total += day_profit
        results.append(DayResult(day=day, profit=day_profit, final_soc=soc))
    return ProfitReport(
        total_profit=total,
        day_count=series.n_days,
        capacity_mwh=params.capacity_mwh,
        per_day=tuple(results),
    )


@dataclass(frozen=True)
class ComparisonTable:
    """Profit per controller plus pairwise percentage differences.

    ``pct[i][j]`` is the improvement of controller ``i`` over controller
    ``j`` in percent: ``(profit_i - profit_j) / profit_j * 100``.
    """

    names: tuple[str, ...]
    profits: tuple[float, ...]

    def pct(self, i: int, j: int) -> float:
        return (self.profits[i] - self.profits[j]) / self.profits[j] * 100.0

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            header = ["controller", "profit_eur_per_day_per_mwh"]
            header += [f"pct_vs_{n}" for n in self.names]
            fh.write(",".join(header) + "\n")
            for i, (name, profit) in enumerate(zip(self.names, self.profits)):
                cells = [name, repr(profit)]
                cells += [f"{self.pct(i, j):.1f}" for j in range(len(self.names))]
                fh.write(",".join(cells) + "\n")


def compare_from_profits(names, profits) -> ComparisonTable:
    if len(names) != len(profits) or len(names) < 2:
        raise ValueError("need at least two named profits")
    return ComparisonTable(names=tuple(names), profits=tuple(float(p) for p in profits))


def compare_controllers(
    controllers: dict,
    series: PriceSeries,
    params: BatteryParams,
    initial_soc: float = 0.5,
) -> ComparisonTable:
    """Backtest each named controller on the same series and tabulate."""
    if len(controllers) < 2:
        raise ValueError("need at least two controllers to compare")
    names = []
    profits = []
    for name, controller in controllers.items():
        report = backtest(controller, series, params, initial_soc)
        names.append(name)
        profits.append(report.profit_per_day_per_mwh)
    return compare_from_profits(names, profits)


@dataclass(frozen=True)
class HeatmapTable:
    """Greedy action per (price, soc) cell for one calendar context."""

    context: tuple[int, int, int]
    prices: np.ndarray
    socs: np.ndarray
    actions: np.ndarray  # (n_prices, n_socs) int

    def rows(self):
        for i, price in enumerate(self.prices):
            for j, soc in enumerate(self.socs):
                yield price, soc, int(self.actions[i, j])

    def to_csv(self, path) -> None:
        minute, qh, month = self.context
        with open(path, "w") as fh:
            fh.write("minute_of_qh,qh_of_day,month,price_eur_mwh,soc,action\n")
            for price, soc, action in self.rows():
                fh.write(f"{minute},{qh},{month},{price!r},{soc!r},{action}\n")


def policy_heatmap(controller, grid: GridSpec) -> list[HeatmapTable]:
    """Greedy action over the probe lattice, one table per calendar context."""
    tables = []
    n_price = len(grid.prices())
    n_soc = len(grid.socs())
    for context in grid.contexts:
        batch = grid.context_batch(context)
        actions = np.asarray(controller.act_batch(batch), dtype=np.int64)
        tables.append(
            HeatmapTable(
                context=context,
                prices=grid.prices(),
                socs=grid.socs(),
                actions=actions.reshape(n_price, n_soc),
            )
        )
    return tables


@dataclass(frozen=True)
class HistogramTable:
    """Normalised frequency of per-quarter-hour settled prices."""

    bin_edges: np.ndarray  # (n_bins + 1,)
    frequencies: np.ndarray  # (n_bins,), sums to 1

    def fraction_below(self, threshold: float) -> float:
        """Fraction of samples in bins fully below ``threshold``."""
        full = self.bin_edges[1:] <= threshold
        return float(self.frequencies[full].sum())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("bin_left,bin_right,frequency\n")
            for left, right, freq in zip(self.bin_edges, self.bin_edges[1:], self.frequencies):
                fh.write(f"{left!r},{right!r},{freq!r}\n")


def price_histogram(series: PriceSeries, bin_width: float) -> HistogramTable:
    """Histogram of settled prices (one sample per quarter hour)."""
    if series.n_days == 0:
        raise ValueError("cannot histogram an empty series")
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    samples = series.settled_per_qh()
    lo = np.floor(samples.min() / bin_width) * bin_width
    hi = np.ceil(samples.max() / bin_width) * bin_width
    if hi <= lo:
        hi = lo + bin_width
    n_bins = int(round((hi - lo) / bin_width))
    counts, edges = np.histogram(samples, bins=n_bins, range=(lo, hi))
    return HistogramTable(bin_edges=edges, frequencies=counts / counts.sum())


@dataclass(frozen=True)
class TraceRow:
    step: int
    minute: int
    indicative_price: float
    action: int
    soc: float
    reward: float


@dataclass(frozen=True)
class TraceTable:
    day: dt.date
    rows: tuple[TraceRow, ...]

    @property
    def total_reward(self) -> float:
        return sum(r.reward for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,minute,indicative_price_eur_mwh,action,soc,reward_eur\n")
            for r in self.rows:
                fh.write(
                    f"{r.step},{r.minute},{r.indicative_price!r},{r.action},{r.soc!r},{r.reward!r}\n"
                )


def day_trace(
    controller,
    series: PriceSeries,
    day: dt.date,
    params: BatteryParams,
    initial_soc: float = 0.5,
) -> TraceTable:
    """Per-step trace of one day: observed price, action, post-step SoC, reward."""
    env = BatteryEnv(series, params)
    state = env.reset(day, initial_soc)
    rows = []
    done = False
    step = 0
    while not done:
        price = state.indicative_price
        minute = step * params.step_minutes
        action = _act(controller, state)
        state, reward, done = env.step(action)
        rows.append(
            TraceRow(
                step=step,
                minute=minute,
                indicative_price=price,
                action=action,
                soc=env.soc,
                reward=reward,
            )
        )
        step += 1
    return TraceTable(day=day, rows=tuple(rows))

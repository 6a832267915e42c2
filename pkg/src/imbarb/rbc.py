"""Threshold rule-based controller: charge cheap, discharge expensive."""

from __future__ import annotations

import numpy as np

from imbarb.battery_env import Action
from imbarb.market_data import RbcThresholds


def rbc_action(indicative_price: float, thresholds: RbcThresholds) -> Action:
    """Full charge below the lower threshold, full discharge above the upper,
    idle on the closed middle interval (boundary prices idle)."""
    if indicative_price < thresholds.lower:
        return Action.CHARGE
    if indicative_price > thresholds.upper:
        return Action.DISCHARGE
    return Action.IDLE


def rbc_actions(prices: np.ndarray, thresholds: RbcThresholds) -> np.ndarray:
    """Vectorised :func:`rbc_action` -> int array of action indices."""
    prices = np.asarray(prices, dtype=np.float64)
    out = np.full(prices.shape, int(Action.IDLE), dtype=np.int64)
    out[prices < thresholds.lower] = int(Action.CHARGE)
    out[prices > thresholds.upper] = int(Action.DISCHARGE)
    return out

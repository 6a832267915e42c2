"""Linear constraints encoding the three human-intuition policy properties.

Property 1 forces charging at or below a floor price, Property 2 forces
discharging at or above a cap price, and Property 3 forces the greedy action
(ordered charge > idle > discharge) to be non-increasing in price and state
of charge.  Property 3 is disjunctive at the argmax level, so it is
instantiated as per-state margin constraints against argmax hints of the
dominating states; the fixpoint loop in :mod:`imbarb.correction.verify`
iterates hints until the ordering holds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from imbarb.battery_env import Action, StateBatch

FEASIBLE_MARGIN_LIMIT = 1.0 / 3.0


class InfeasibleConstraintsError(Exception):
    """The constraint set admits no probability vector."""


@dataclass(frozen=True)
class ConstraintConfig:
    """Thresholds and training weights for the correction step.

    ``margin`` is the probability gap that makes a forced argmax strict; it
    must stay below 1/3 so every per-state constraint set remains feasible.
    ``teacher_kl_weight`` balances teacher mimicry against agreement between
    the student's pre- and post-projection outputs.
    """

    price_lower: float = -500.0
    price_upper: float = 1500.0
    margin: float = 1e-3
    teacher_kl_weight: float = 1e-4
    kd_temperature: float = 1.0

    def __post_init__(self):
        if not self.price_lower < self.price_upper:
            raise ValueError("price_lower must be below price_upper")
        if not 0.0 < self.margin < FEASIBLE_MARGIN_LIMIT:
            raise ValueError("margin must lie in (0, 1/3)")
        if self.teacher_kl_weight <= 0:
            raise ValueError("teacher_kl_weight must be positive")
        if self.kd_temperature <= 0:
            raise ValueError("kd_temperature must be positive")

    def to_dict(self) -> dict:
        return {
            "price_lower": self.price_lower,
            "price_upper": self.price_upper,
            "margin": self.margin,
            "teacher_kl_weight": self.teacher_kl_weight,
            "kd_temperature": self.kd_temperature,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstraintConfig":
        return cls(**doc)


@dataclass(frozen=True)
class LinearConstraint:
    """sum(coeff * p[state, action] for terms) >= bound."""

    terms: tuple[tuple[int, int, float], ...]
    bound: float
    label: str = ""

    @property
    def states(self) -> frozenset[int]:
        return frozenset(t[0] for t in self.terms)


def margin_constraint(state: int, winner: int, loser: int, margin: float, label: str = "") -> LinearConstraint:
    """p[state, winner] - p[state, loser] >= margin."""
    return LinearConstraint(
        terms=((state, int(winner), 1.0), (state, int(loser), -1.0)),
        bound=margin,
        label=label,
    )


class ConstraintSet:
    """Validated collection of linear constraints over a batch of policies."""

    def __init__(self, constraints: Iterable[LinearConstraint], n_states: int):
        constraints = tuple(constraints)
        for c in constraints:
            if not c.terms:
                raise ValueError("constraint with no terms")
            for s, a, _ in c.terms:
                if not 0 <= s < n_states:
                    raise ValueError(f"constraint references state {s} outside batch of {n_states}")
                if not 0 <= a < 3:
                    raise ValueError(f"constraint references action {a}")
        self._constraints = constraints
        self.n_states = n_states

    def __len__(self) -> int:
        return len(self._constraints)

    def __iter__(self) -> Iterator[LinearConstraint]:
        return iter(self._constraints)

    @property
    def constraints(self) -> tuple[LinearConstraint, ...]:
        return self._constraints

    def split_by_coupling(self):
        """(per-state constraint lists, cross-state constraint list)."""
        per_state: dict[int, list[LinearConstraint]] = {}
        cross: list[LinearConstraint] = []
        for c in self._constraints:
            states = c.states
            if len(states) == 1:
                per_state.setdefault(next(iter(states)), []).append(c)
            else:
                cross.append(c)
        return per_state, cross


def _forced_hints(batch: StateBatch, config: ConstraintConfig, hints: np.ndarray) -> np.ndarray:
    """Hints with the price-threshold properties already applied.

    Keeps Property-3 constraint generation consistent with Properties 1-2,
    which rules out contradictory forcings within one state.
    """
    out = np.asarray(hints, dtype=np.int64).copy()
    out[batch.indicative_price <= config.price_lower] = int(Action.CHARGE)
    out[batch.indicative_price >= config.price_upper] = int(Action.DISCHARGE)
    return out


def build_constraints(
    batch: StateBatch,
    config: ConstraintConfig,
    reference_argmax: Sequence[int] | np.ndarray,
) -> ConstraintSet:
    """Instantiate Property 1-3 constraints for a batch of states.

    For Property 3, every ordered pair (s, s') with componentwise
    (price, soc) dominance and identical calendar fields contributes a
    constraint on s chosen by the hinted argmax of s': a charge hint forces
    argmax(s) to charge via two margin constraints, an idle hint forces
    idle above discharge, a discharge hint adds nothing.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty state batch")
    hints = np.asarray(reference_argmax, dtype=np.int64)
    if hints.shape != (n,):
        raise ValueError("reference_argmax must supply one hint per state")
    hints = _forced_hints(batch, config, hints)
    eps = config.margin

    charge_forced = np.zeros(n, dtype=bool)
    discharge_forced = np.zeros(n, dtype=bool)
    idle_over_discharge = np.zeros(n, dtype=bool)

    charge_forced[batch.indicative_price <= config.price_lower] = True
    discharge_forced[batch.indicative_price >= config.price_upper] = True

    labels = {}
    for i in np.nonzero(charge_forced)[0]:
        labels[int(i)] = "P1"
    for i in np.nonzero(discharge_forced)[0]:
        labels[int(i)] = "P2"

    calendar = np.stack([batch.minute_of_qh, batch.qh_of_day, batch.month], axis=1)
    order = np.lexsort((batch.month, batch.qh_of_day, batch.minute_of_qh))
    groups: dict[tuple, list[int]] = {}
    for i in order:
        groups.setdefault(tuple(calendar[i]), []).append(int(i))

    for members in groups.values():
        if len(members) < 2:
            continue
        idx = np.array(members)
        price = batch.indicative_price[idx]
        soc = batch.soc[idx]
        dominated = (price[:, None] <= price[None, :]) & (soc[:, None] <= soc[None, :])
        np.fill_diagonal(dominated, False)
        hint_rows = hints[idx]
        has_charge_dom = (dominated & (hint_rows[None, :] == int(Action.CHARGE))).any(axis=1)
        has_idle_dom = (dominated & (hint_rows[None, :] == int(Action.IDLE))).any(axis=1)
        for local, i in enumerate(members):
            if has_charge_dom[local] and not charge_forced[i]:
                charge_forced[i] = True
                labels.setdefault(i, "P3")
            if has_idle_dom[local]:
                idle_over_discharge[i] = True

    conflict = charge_forced & discharge_forced
    if conflict.any():
        i = int(np.nonzero(conflict)[0][0])
        raise InfeasibleConstraintsError(
            f"state {i} is forced both to charge and to discharge "
            f"(price {batch.indicative_price[i]}, soc {batch.soc[i]})"
        )

    out: list[LinearConstraint] = []
    for i in range(n):
        if charge_forced[i]:
            label = labels.get(i, "P3")
            out.append(margin_constraint(i, Action.CHARGE, Action.IDLE, eps, label))
            out.append(margin_constraint(i, Action.CHARGE, Action.DISCHARGE, eps, label))
        if discharge_forced[i]:
            out.append(margin_constraint(i, Action.DISCHARGE, Action.IDLE, eps, "P2"))
            out.append(margin_constraint(i, Action.DISCHARGE, Action.CHARGE, eps, "P2"))
        if idle_over_discharge[i] and not charge_forced[i] and not discharge_forced[i]:
            out.append(margin_constraint(i, Action.IDLE, Action.DISCHARGE, eps, "P3"))
    return ConstraintSet(out, n)

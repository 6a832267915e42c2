"""Exhaustive property checks of a policy over a (price, soc) probe grid.

Property 3 is verified on lattice-adjacent pairs only; on a grid this
transitive reduction is equivalent to checking every componentwise-ordered
pair, since the greedy-action order relation is transitive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from imbarb.battery_env import Action, EnvState, StateBatch
from imbarb.correction.constraints import ConstraintConfig, build_constraints
from imbarb.correction.qp import project_policy

_MAX_EXAMPLES = 10


@dataclass(frozen=True)
class GridSpec:
    """Probe lattice: price and SoC ranges crossed with calendar contexts."""

    price_min: float = -800.0
    price_max: float = 1800.0
    price_step: float = 50.0
    soc_min: float = 0.10
    soc_max: float = 1.0
    soc_step: float = 0.05
    contexts: tuple[tuple[int, int, int], ...] = ((0, 20, 1), (0, 60, 1))

    def __post_init__(self):
        if self.price_step <= 0 or self.soc_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.price_min > self.price_max or self.soc_min > self.soc_max:
            raise ValueError("grid bounds must be ordered")
        if not self.contexts:
            raise ValueError("need at least one calendar context")
        for minute, qh, month in self.contexts:
            if not (0 <= minute <= 14 and 0 <= qh <= 95 and 1 <= month <= 12):
                raise ValueError(f"invalid calendar context {(minute, qh, month)}")

    def prices(self) -> np.ndarray:
        n = int(np.floor((self.price_max - self.price_min) / self.price_step + 1e-9)) + 1
        return self.price_min + self.price_step * np.arange(n)

    def socs(self) -> np.ndarray:
        n = int(np.floor((self.soc_max - self.soc_min) / self.soc_step + 1e-9)) + 1
        return self.soc_min + self.soc_step * np.arange(n)

    @property
    def n_states(self) -> int:
        return len(self.prices()) * len(self.socs()) * len(self.contexts)

    def context_batch(self, context: tuple[int, int, int]) -> StateBatch:
        """Price-major lattice batch for one calendar context."""
        minute, qh, month = context
        prices = self.prices()
        socs = self.socs()
        pp, ss = np.meshgrid(prices, socs, indexing="ij")
        n = pp.size
        return StateBatch(
            minute_of_qh=np.full(n, minute, dtype=np.int64),
            qh_of_day=np.full(n, qh, dtype=np.int64),
            month=np.full(n, month, dtype=np.int64),
            soc=ss.ravel(),
            indicative_price=pp.ravel(),
        )

    def to_dict(self) -> dict:
        return {
            "price_min": self.price_min,
            "price_max": self.price_max,
            "price_step": self.price_step,
            "soc_min": self.soc_min,
            "soc_max": self.soc_max,
            "soc_step": self.soc_step,
            "contexts": [list(c) for c in self.contexts],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        doc = dict(doc)
        doc["contexts"] = tuple(tuple(int(v) for v in c) for c in doc["contexts"])
        return cls(**doc)


@dataclass
class ViolationReport:
    """Per-property violation counts with a few example states each.

    A state counts as a Property-3 violation when its greedy action is
    strictly below that of a lattice-adjacent dominating state, attributed
    to the dominated (lower price/soc) state, so every count is bounded by
    ``total_states``.
    """

    p1_count: int = 0
    p2_count: int = 0
    p3_count: int = 0
    total_states: int = 0
    examples: dict = field(default_factory=lambda: {"P1": [], "P2": [], "P3": []})

    @property
    def total_violations(self) -> int:
        return self.p1_count + self.p2_count + self.p3_count

    @property
    def passed(self) -> bool:
        return self.total_violations == 0

    def count(self, prop: str) -> int:
        return {"P1": self.p1_count, "P2": self.p2_count, "P3": self.p3_count}[prop]

    def to_json(self) -> str:
        def state_doc(s: EnvState) -> dict:
            return {
                "minute_of_qh": s.minute_of_qh,
                "qh_of_day": s.qh_of_day,
                "month": s.month,
                "soc": s.soc,
                "indicative_price": s.indicative_price,
            }

        return json.dumps(
            {
                "total_states": self.total_states,
                "violations": {
                    "P1": self.p1_count,
                    "P2": self.p2_count,
                    "P3": self.p3_count,
                },
                "examples": {k: [state_doc(s) for s in v] for k, v in self.examples.items()},
            },
            indent=1,
            sort_keys=True,
        )


PolicyFn = Callable[[StateBatch], np.ndarray]


def verify_properties(policy: PolicyFn, grid: GridSpec, config: ConstraintConfig) -> ViolationReport:
    """Count Property 1-3 violations of ``policy`` over the probe grid.

    ``policy`` maps a :class:`StateBatch` to an integer argmax array.
    """
    report = ViolationReport()
    n_soc = len(grid.socs())
    n_price = len(grid.prices())
    for context in grid.contexts:
        batch = grid.context_batch(context)
        argmax = np.asarray(policy(batch), dtype=np.int64)
        if argmax.shape != (len(batch),):
            raise ValueError("policy must return one action index per state")
        lattice = argmax.reshape(n_price, n_soc)
        prices = batch.indicative_price.reshape(n_price, n_soc)

        p1_bad = (prices <= config.price_lower) & (lattice != int(Action.CHARGE))
        p2_bad = (prices >= config.price_upper) & (lattice != int(Action.DISCHARGE))
        p3_bad = np.zeros_like(p1_bad)
        # dominated state (lower price / lower soc) must act at least as high
        p3_bad[:-1, :] |= lattice[:-1, :] < lattice[1:, :]
        p3_bad[:, :-1] |= lattice[:, :-1] < lattice[:, 1:]

        report.total_states += len(batch)
        for name, bad in (("P1", p1_bad), ("P2", p2_bad), ("P3", p3_bad)):
            flat = np.nonzero(bad.ravel())[0]
            if name == "P1":
                report.p1_count += len(flat)
            elif name == "P2":
                report.p2_count += len(flat)
            else:
                report.p3_count += len(flat)
            room = _MAX_EXAMPLES - len(report.examples[name])
            for i in flat[:room]:
                report.examples[name].append(batch.state(int(i)))
    return report


def violating_states(policy: PolicyFn, grid: GridSpec, config: ConstraintConfig) -> StateBatch | None:
    """All property-violating grid states, P3 pairs included on both sides.

    Used by the distillation loop to pin problem states into training
    batches; returns None when the policy is clean on the grid.
    """
    collected = []
    n_soc = len(grid.socs())
    n_price = len(grid.prices())
    for context in grid.contexts:
        batch = grid.context_batch(context)
        argmax = np.asarray(policy(batch), dtype=np.int64)
        lattice = argmax.reshape(n_price, n_soc)
        prices = batch.indicative_price.reshape(n_price, n_soc)

        bad = (prices <= config.price_lower) & (lattice != int(Action.CHARGE))
        bad |= (prices >= config.price_upper) & (lattice != int(Action.DISCHARGE))
        price_pair = lattice[:-1, :] < lattice[1:, :]
        soc_pair = lattice[:, :-1] < lattice[:, 1:]
        bad[:-1, :] |= price_pair
        bad[1:, :] |= price_pair
        bad[:, :-1] |= soc_pair
        bad[:, 1:] |= soc_pair

        idx = np.nonzero(bad.ravel())[0]
        if len(idx):
            collected.append(batch.subset(idx))
    if not collected:
        return None
    from imbarb.battery_env import concat_state_batches

    return concat_state_batches(collected)


def project_batch_fixpoint(
    probs: np.ndarray,
    batch: StateBatch,
    config: ConstraintConfig,
    max_rounds: int = 64,
) -> np.ndarray:
    """With-layer policy over a batch: project with hint regeneration.

    Constraints are rebuilt from the projected argmax until the hints are
    stable.  Forced action levels only ever rise, so the loop terminates; at
    the fixed point the batch satisfies Properties 1-3 among its own states.
    """
    x = np.asarray(probs, dtype=np.float64)
    hints = np.argmax(x, axis=1)
    out = x
    for _ in range(max_rounds):
        cset = build_constraints(batch, config, hints)
        out = project_policy(x, cset)
        new_hints = np.argmax(out, axis=1)
        if (new_hints == hints).all():
            return out
        hints = new_hints
    raise RuntimeError("hint fixpoint did not stabilise")

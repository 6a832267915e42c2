"""Uniform controller interface over RBC, value agents, and distilled students.

A controller maps a :class:`~imbarb.battery_env.StateBatch` to greedy action
indices; backtests drive it one state at a time, grid tools in full batches.
"""

from __future__ import annotations

import numpy as np

from imbarb.agents import AgentNets, action_values
from imbarb.battery_env import NormStats, StateBatch
from imbarb.correction.constraints import ConstraintConfig
from imbarb.correction.distill import nets_from_checkpoint
from imbarb.correction.verify import project_batch_fixpoint
from imbarb.market_data import RbcThresholds
from imbarb.nn import Checkpoint
from imbarb.rbc import rbc_actions


class RbcController:
    """Threshold rule; ignores everything but the indicative price."""

    def __init__(self, thresholds: RbcThresholds):
        self.thresholds = thresholds
        self.name = "rbc"

    def act_batch(self, batch: StateBatch) -> np.ndarray:
        return rbc_actions(batch.indicative_price, self.thresholds)


class ValueController:
    """Greedy argmax over a value agent's action values (dqn or ddqn)."""

    def __init__(self, nets: AgentNets, norm: NormStats, name: str | None = None):
        self.nets = nets
        self.norm = norm
        self.name = name or nets.kind

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, name: str | None = None) -> "ValueController":
        if ckpt.norm_stats is None:
            raise ValueError("checkpoint carries no norm stats")
        return cls(nets_from_checkpoint(ckpt), ckpt.norm_stats, name=name or ckpt.kind)

    def act_batch(self, batch: StateBatch) -> np.ndarray:
        values = action_values(self.nets, batch.features(self.norm))
        return np.argmax(values, axis=1)


class StudentController:
    """Distilled student; layer-free by default, with-layer on request.

    The with-layer path projects the softmax output through the constraint
    layer, regenerating monotonicity hints within the queried batch, and is
    retained for verification and fallback.
    """

    def __init__(
        self,
        ckpt: Checkpoint,
        with_layer: bool = False,
        config: ConstraintConfig | None = None,
    ):
        if ckpt.kind != "student":
            raise ValueError(f"expected a student checkpoint, got kind {ckpt.kind!r}")
        if ckpt.norm_stats is None:
            raise ValueError("checkpoint carries no norm stats")
        self.net = ckpt.net()
        self.norm = ckpt.norm_stats
        self.with_layer = with_layer
        if config is None:
            config = ConstraintConfig.from_dict(ckpt.meta["constraint_config"])
        self.config = config
        self.name = "student-layer" if with_layer else "student"

    def probabilities(self, batch: StateBatch) -> np.ndarray:
        from imbarb.nn import softmax

        probs = softmax(self.net.forward(batch.features(self.norm)))
        if self.with_layer:
            probs = project_batch_fixpoint(probs, batch, self.config)
        return probs

    def act_batch(self, batch: StateBatch) -> np.ndarray:
        return np.argmax(self.probabilities(batch), axis=1)


def controller_from_checkpoint(ckpt: Checkpoint, with_layer: bool = False):
    """Build the right controller for a checkpoint kind."""
    if ckpt.kind in ("dqn", "ddqn"):
        return ValueController.from_checkpoint(ckpt)
    if ckpt.kind == "student":
        return StudentController(ckpt, with_layer=with_layer)
    raise ValueError(f"no controller for checkpoint kind {ckpt.kind!r}")

"""Constrained knowledge distillation of a trained agent into a small policy net.

The frozen teacher provides soft action preferences.  The student's softmax
output passes through the constrained projection during training; the loss
balances teacher mimicry against agreement between the student's pre- and
post-projection outputs, so the projection layer can be dropped at inference
while the layer-free policy still honours the constraints almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from imbarb.agents import AgentNets, action_values, atom_grid
from imbarb.battery_env import (
    BatteryEnv,
    BatteryParams,
    NormStats,
    StateBatch,
    concat_state_batches,
)
from imbarb.correction.constraints import ConstraintConfig, build_constraints
from imbarb.correction.qp import project_policy_backward, project_policy_with_info
from imbarb.correction.verify import GridSpec, violating_states
from imbarb.market_data import DatasetSplit
from imbarb.nn import (
    AdamState,
    Checkpoint,
    FeedForwardNet,
    adam_step,
    kl_divergence,
    softmax,
)

_FLOOR = 1e-12


class DistillationDivergedError(RuntimeError):
    """Distillation loss became non-finite."""


def nets_from_checkpoint(ckpt: Checkpoint) -> AgentNets:
    """Rebuild a frozen agent (online == target) from a checkpoint."""
    net = ckpt.net()
    atoms = None
    if ckpt.kind == "ddqn":
        atoms = atom_grid(ckpt.meta["v_min"], ckpt.meta["v_max"], ckpt.meta["n_atoms"])
    return AgentNets(online=net, target=net.copy(), kind=ckpt.kind, atoms=atoms)


def teacher_policy(teacher: AgentNets, features: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Soft action preferences of the frozen teacher.

    Action values (Q for dqn, expected return for ddqn) pass through a
    tempered softmax.
    """
    values = action_values(teacher, np.atleast_2d(features))
    return softmax(values, temperature=temperature)


def distill_loss(
    student_pre: np.ndarray,
    student_post: np.ndarray,
    teacher_probs: np.ndarray,
    teacher_kl_weight: float,
) -> float:
    """Mean of weight * KL(post || teacher) + KL(pre || post) over the batch."""
    kl_teacher = kl_divergence(student_post, teacher_probs)
    kl_layer = kl_divergence(student_pre, student_post)
    return float(np.mean(teacher_kl_weight * kl_teacher + kl_layer))


def _distill_grads(pre, post, teacher, weight, info):
    """Gradient of :func:`distill_loss` w.r.t. the student's softmax output."""
    b = len(pre)
    post_f = np.maximum(post, _FLOOR)
    pre_f = np.maximum(pre, _FLOOR)
    teacher_f = np.maximum(teacher, _FLOOR)
    g_post = weight * (np.log(post_f) - np.log(teacher_f) + 1.0) - pre / post_f
    g_pre = np.log(pre_f) - np.log(post_f) + 1.0
    g_pre = (g_pre + project_policy_backward(info, g_post)) / b
    return g_pre


def _softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    inner = (upstream * probs).sum(axis=1, keepdims=True)
    return probs * (upstream - inner)


@dataclass
class DistillOptions:
    """Desk-scale knobs for the distillation loop (paper-scale defaults)."""

    student_hidden: tuple[int, ...] = (64, 32)
    batch_size: int = 128
    lattice_price: tuple[float, float, float] = (-1000.0, 2000.0, 100.0)
    lattice_soc: tuple[float, float, float] = (0.10, 1.0, 0.1)
    probe_grid: GridSpec = field(default_factory=GridSpec)
    verify_every: int = 25
    max_pinned: int = 2048
    initial_soc: float = 0.5


def _lattice_batch(options: DistillOptions, context: tuple[int, int, int]) -> StateBatch:
    lo, hi, step = options.lattice_price
    prices = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    lo, hi, step = options.lattice_soc
    socs = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    minute, qh, month = context
    pp, ss = np.meshgrid(prices, socs, indexing="ij")
    n = pp.size
    return StateBatch(
        minute_of_qh=np.full(n, minute, dtype=np.int64),
        qh_of_day=np.full(n, qh, dtype=np.int64),
        month=np.full(n, month, dtype=np.int64),
        soc=ss.ravel(),
        indicative_price=pp.ravel(),
    )


def _teacher_trajectory_states(
    teacher: AgentNets, norm: NormStats, split: DatasetSplit, params: BatteryParams, initial_soc: float
) -> StateBatch:
    """States visited by the teacher's greedy policy over the training days."""
    from imbarb.battery_env import encode_state

    env = BatteryEnv(split.train, params)
    states = []
    for day in split.train.days:
        state = env.reset(day, initial_soc)
        done = False
        while not done:
            states.append(state)
            feats = encode_state(state, norm)
            action = int(np.argmax(action_values(teacher, feats[None, :])[0]))
            state, _, done = env.step(action)
    return StateBatch.from_states(states)


def train_student(
    teacher_ckpt: Checkpoint,
    split: DatasetSplit,
    config: ConstraintConfig,
    epochs: int,
    learning_rate: float,
    seed: int,
    params: BatteryParams | None = None,
    options: DistillOptions | None = None,
) -> Checkpoint:
    """Distill the teacher into a constrained student checkpoint.

    Each minibatch is half teacher-trajectory states and half a structured
    (price, soc) lattice slice sharing one calendar context, so
    monotonicity pairs exist inside every batch.  After every
    ``verify_every`` epochs the layer-free student is screened on the probe
    grid and violating states are pinned into subsequent batches until the
    screen is clean or the epoch budget runs out.  Deterministic per seed.
    """
    params = params or BatteryParams()
    options = options or DistillOptions()
    if teacher_ckpt.norm_stats is None:
        raise ValueError("teacher checkpoint carries no norm stats")
    norm = teacher_ckpt.norm_stats
    teacher = nets_from_checkpoint(teacher_ckpt)

    rng = np.random.default_rng(seed)
    student = FeedForwardNet.initialize((5, *options.student_hidden, 3), rng)
    adam = AdamState.for_net(student, learning_rate)

    traj = _teacher_trajectory_states(teacher, norm, split, params, options.initial_soc)
    contexts = tuple(options.probe_grid.contexts)
    lattices = [_lattice_batch(options, c) for c in contexts]
    pinned: StateBatch | None = None

    half = max(1, options.batch_size // 2)
    batches_per_epoch = max(1, int(np.ceil(len(traj) / half)))

    def layer_free_policy(batch: StateBatch) -> np.ndarray:
        logits = student.forward(batch.features(norm))
        return np.argmax(logits, axis=1)

    epoch_loss: list[float] = []
    for epoch in range(epochs):
        loss_sum = 0.0
        for _ in range(batches_per_epoch):
            parts = [traj.subset(rng.integers(0, len(traj), size=half))]
            lattice = lattices[int(rng.integers(len(lattices)))]
            parts.append(lattice.subset(rng.integers(0, len(lattice), size=half)))
            if pinned is not None:
                take = min(len(pinned), half)
                parts.append(pinned.subset(rng.integers(0, len(pinned), size=take)))
            batch = concat_state_batches(parts)

            feats = batch.features(norm)
            logits, cache = student.forward_cached(feats)
            pre = softmax(logits)
            teacher_probs = teacher_policy(teacher, feats, config.kd_temperature)
            hints = np.argmax(pre, axis=1)
            cset = build_constraints(batch, config, hints)
            post, info = project_policy_with_info(pre, cset)

            loss = distill_loss(pre, post, teacher_probs, config.teacher_kl_weight)
            if not np.isfinite(loss):
                raise DistillationDivergedError(f"non-finite loss at epoch {epoch}")
            loss_sum += loss
            g_pre = _distill_grads(pre, post, teacher_probs, config.teacher_kl_weight, info)
            upstream = _softmax_backward(pre, g_pre)
            grads = student.backward(cache, upstream)
            adam_step(student, grads, adam)
        epoch_loss.append(loss_sum / batches_per_epoch)

        last_epoch = epoch == epochs - 1
        if options.verify_every > 0 and ((epoch + 1) % options.verify_every == 0 or last_epoch):
            fresh = violating_states(layer_free_policy, options.probe_grid, config)
            pinned = _pin_violations(fresh, options, pinned)

    meta = {
        "agent": "student",
        "seed": seed,
        "epochs": epochs,
        "learning_rate": learning_rate,
        "teacher_kind": teacher_ckpt.kind,
        "constraint_config": config.to_dict(),
        "student_hidden": list(options.student_hidden),
        "epoch_loss": epoch_loss,
    }
    return Checkpoint.from_net(student, "student", norm_stats=norm, meta=meta)


def _pin_violations(
    fresh: StateBatch | None, options: DistillOptions, pinned: StateBatch | None
) -> StateBatch | None:
    """Fold violating probe states into the pinned pool, capped and deduplicated."""
    if fresh is None or len(fresh) == 0:
        return pinned
    merged = fresh if pinned is None else concat_state_batches([pinned, fresh])
    rows = np.stack(
        [
            merged.minute_of_qh,
            merged.qh_of_day,
            merged.month,
            merged.soc,
            merged.indicative_price,
        ],
        axis=1,
    )
    _, keep = np.unique(rows, axis=0, return_index=True)
    keep = np.sort(keep)[-options.max_pinned :]
    return merged.subset(keep)

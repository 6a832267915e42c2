"""DQN and categorical distributional-DQN trainers.

Both agents share the replay buffer, soft target updates, and epsilon-greedy
exploration with a linear anneal.  The distributional agent keeps a
categorical return distribution per action on a fixed atom grid; its Bellman
backup projects the shifted/scaled target distribution back onto the grid and
minimises the KL divergence to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from imbarb import _kernels
from imbarb.battery_env import BatteryEnv, BatteryParams, NormStats, encode_state
from imbarb.market_data import DatasetSplit
from imbarb.nn import AdamState, Checkpoint, FeedForwardNet, adam_step, softmax
from imbarb.replay import ReplayBuffer

N_ACTIONS = 3


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both agent kinds.

    Defaults are full-scale; desk-scale runs shrink ``episodes``,
    ``minibatch``, ``buffer_capacity``, and the network widths.
    """

    gamma: float = 0.999
    tau: float = 0.1
    episodes: int = 50_000
    minibatch: int = 16_384
    buffer_capacity: int = 1_000_000
    learning_rate: float = 5e-4
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_fraction: float = 0.4
    updates_per_step: int = 1
    seed: int = 0
    hidden_dims: tuple[int, ...] = (256, 128)
    n_atoms: int = 51
    v_min: float = -1e5
    v_max: float = 1e5
    validation_every: int = 250
    initial_soc: float = 0.5
    ddqn_argmax_online: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("minibatch", "buffer_capacity", "updates_per_step", "n_atoms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_anneal_fraction <= 1.0:
            raise ValueError("epsilon_anneal_fraction must lie in (0, 1]")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")


@dataclass
class AgentNets:
    """Online/target network pair; ``atoms`` is set for the ddqn kind."""

    online: FeedForwardNet
    target: FeedForwardNet
    kind: str
    atoms: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("dqn", "ddqn"):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.online.layer_dims != self.target.layer_dims:
            raise ValueError("online and target topologies differ")
        if self.kind == "ddqn":
            if self.atoms is None or self.online.out_dim != N_ACTIONS * len(self.atoms):
                raise ValueError("ddqn output dim must be 3 * n_atoms")
        elif self.online.out_dim != N_ACTIONS:
            raise ValueError("dqn output dim must be 3")


@dataclass(frozen=True)
class ReturnDistribution:
    """Categorical distribution over a fixed, equally spaced return grid."""

    atom_values: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atom_values, dtype=np.float64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if atoms.shape != probs.shape or atoms.ndim != 1:
            raise ValueError("atoms and probabilities must be congruent vectors")
        if len(atoms) >= 2:
            gaps = np.diff(atoms)
            if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-9):
                raise ValueError("atoms must be equally spaced")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")

    @property
    def mean(self) -> float:
        return float(self.atom_values @ self.probabilities)


def atom_grid(v_min: float, v_max: float, n_atoms: int) -> np.ndarray:
    return np.linspace(v_min, v_max, n_atoms)


def dist_from_logits(logits: np.ndarray, n_atoms: int) -> np.ndarray:
    """(batch, 3*n_atoms) logits -> per-action softmax (batch, 3, n_atoms)."""
    return softmax(logits.reshape(logits.shape[0], N_ACTIONS, n_atoms), axis=-1)


def action_values(nets: AgentNets, features: np.ndarray, use_target: bool = False) -> np.ndarray:
    """(batch, 3) action values: Q for dqn, expected return for ddqn."""
    net = nets.target if use_target else nets.online
    out = net.forward(features)
    if out.ndim == 1:
        out = out[None, :]
    if nets.kind == "dqn":
        return out
    probs = dist_from_logits(out, len(nets.atoms))
    return probs @ nets.atoms


def select_action(nets: AgentNets, features: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over action values; greedy ties break to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(0, N_ACTIONS))
    values = action_values(nets, np.asarray(features)[None, :])[0]
    return int(np.argmax(values))


def soft_update(online: FeedForwardNet, target: FeedForwardNet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise in place."""
    for po, pt in zip(online.parameters(), target.parameters()):
        pt *= 1.0 - tau
        pt += tau * po


def dqn_td_targets(batch: dict, nets: AgentNets, gamma: float, backend=None) -> np.ndarray:
    """r + gamma * max_a Q_target(s', a); terminal rows use r alone."""
    q_next = nets.target.forward(batch["next_states"], backend=backend)
    boot = q_next.max(axis=1)
    cont = 1.0 - batch["dones"].astype(np.float64)
    return batch["rewards"] + gamma * cont * boot


def dqn_loss_grads(nets: AgentNets, batch: dict, gamma: float, backend=None):
    """Mean squared TD error and its gradients w.r.t. the online net."""
    be = backend or _kernels.active
    targets = dqn_td_targets(batch, nets, gamma, backend=be)
    out, cache = nets.online.forward_cached(batch["states"], backend=be)
    rows = np.arange(len(targets))
    taken = out[rows, batch["actions"]]
    err = taken - targets
    loss = float((err * err).mean())
    upstream = np.zeros_like(out)
    upstream[rows, batch["actions"]] = 2.0 * err / len(targets)
    return loss, nets.online.backward(cache, upstream, backend=be)


def categorical_projection_batch(
    probs: np.ndarray, rewards: np.ndarray, gammas: np.ndarray, atoms: np.ndarray, backend=None
) -> np.ndarray:
    """Rowwise projection of ``reward + gamma * atoms`` mass onto the grid."""
    be = backend or _kernels.active
    return be.categorical_project(
        np.ascontiguousarray(probs, dtype=np.float64),
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(gammas, dtype=np.float64),
        np.ascontiguousarray(atoms, dtype=np.float64),
    )


def categorical_projection(
    target_dist: ReturnDistribution | np.ndarray,
    reward: float,
    gamma: float,
    atoms: np.ndarray,
) -> np.ndarray:
    """Single-distribution convenience wrapper over the batch kernel."""
    probs = (
        target_dist.probabilities
        if isinstance(target_dist, ReturnDistribution)
        else np.asarray(target_dist, dtype=np.float64)
    )
    out = categorical_projection_batch(
        probs[None, :], np.array([reward]), np.array([gamma]), np.asarray(atoms, dtype=np.float64)
    )
    return out[0]


def ddqn_loss_grads(
    nets: AgentNets,
    batch: dict,
    gamma: float,
    argmax_online: bool = False,
    backend=None,
):
    """Mean KL(projected target || predicted distribution of the taken action).

    The greedy next action comes from the target network's expected values
    (``argmax_online`` switches that to the online network); the bootstrapped
    distribution itself always comes from the target network.
    """
    be = backend or _kernels.active
    atoms = nets.atoms
    n_atoms = len(atoms)
    b = len(batch["rewards"])
    rows = np.arange(b)

    next_logits = nets.target.forward(batch["next_states"], backend=be)
    next_dist = dist_from_logits(next_logits, n_atoms)
    if argmax_online:
        sel_logits = nets.online.forward(batch["next_states"], backend=be)
        sel_dist = dist_from_logits(sel_logits, n_atoms)
    else:
        sel_dist = next_dist
    greedy = np.argmax(sel_dist @ atoms, axis=1)
    boot = next_dist[rows, greedy]

    cont = (1.0 - batch["dones"].astype(np.float64)) * gamma
    projected = categorical_projection_batch(boot, batch["rewards"], cont, atoms, backend=be)

    out, cache = nets.online.forward_cached(batch["states"], backend=be)
    pred = dist_from_logits(out, n_atoms)
    taken = pred[rows, batch["actions"]]

    floored = np.maximum(taken, 1e-12)
    log_ratio = np.where(
        projected > 0.0, np.log(np.maximum(projected, 1e-12)) - np.log(floored), 0.0
    )
    loss = float((projected * log_ratio).sum(axis=1).mean())

    upstream = np.zeros((b, N_ACTIONS, n_atoms))
    upstream[rows, batch["actions"]] = (taken - projected) / b
    return loss, nets.online.backward(cache, upstream.reshape(b, -1), backend=be)


def epsilon_at(episode: int, config: TrainConfig) -> float:
    """Linear anneal from start to end over the first anneal fraction."""
    horizon = config.epsilon_anneal_fraction * config.episodes
    if horizon <= 0:
        return config.epsilon_end
    frac = min(episode / horizon, 1.0)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


@dataclass
class LearningCurve:
    """Validation profit per day per MWh, sampled every few episodes."""

    points: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("episode,validation_profit_eur_per_day_per_mwh\n")
            for episode, profit in self.points:
                fh.write(f"{episode},{profit!r}\n")


def build_nets(kind: str, config: TrainConfig, rng: np.random.Generator) -> AgentNets:
    out_dim = N_ACTIONS if kind == "dqn" else N_ACTIONS * config.n_atoms
    dims = (5, *config.hidden_dims, out_dim)
    online = FeedForwardNet.initialize(dims, rng)
    atoms = None if kind == "dqn" else atom_grid(config.v_min, config.v_max, config.n_atoms)
    return AgentNets(online=online, target=online.copy(), kind=kind, atoms=atoms)


def train(
    kind: str,
    split: DatasetSplit,
    params: BatteryParams,
    config: TrainConfig,
) -> tuple[Checkpoint, LearningCurve]:
    """Train an agent on the split's training days.

    Per episode: sample a training day, roll out epsilon-greedy, push
    transitions, and once the buffer covers a minibatch run
    ``updates_per_step`` gradient steps per environment step, each followed
    by a soft target update.  Every ``validation_every`` episodes the greedy
    policy is scored on the validation days.  Deterministic per seed and
    backend.
    """
    if split.train.n_days == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    norm = NormStats.from_series(split.train)
    nets = build_nets(kind, config, rng)
    adam = AdamState.for_net(nets.online, config.learning_rate)
    buffer = ReplayBuffer(config.buffer_capacity, 5)
    env = BatteryEnv(split.train, params)
    days = split.train.days
    curve = LearningCurve()

    loss_fn = dqn_loss_grads if kind == "dqn" else ddqn_loss_grads

    for episode in range(config.episodes):
        eps = epsilon_at(episode, config)
        day = days[int(rng.integers(len(days)))]
        state = env.reset(day, config.initial_soc)
        feats = encode_state(state, norm)
        done = False
        while not done:
            action = select_action(nets, feats, eps, rng)
            nxt, reward, done = env.step(action)
            nxt_feats = encode_state(nxt, norm)
            buffer.push(feats, action, reward, nxt_feats, done)
            feats = nxt_feats
            if len(buffer) >= config.minibatch:
                for _ in range(config.updates_per_step):
                    batch = buffer.sample(rng, config.minibatch)
                    if kind == "dqn":
                        loss, grads = dqn_loss_grads(nets, batch, config.gamma)
                    else:
                        loss, grads = ddqn_loss_grads(
                            nets, batch, config.gamma, argmax_online=config.ddqn_argmax_online
                        )
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite loss at episode {episode} ({kind}, seed {config.seed})"
                        )
                    adam_step(nets.online, grads, adam)
                    soft_update(nets.online, nets.target, config.tau)
        if (
            config.validation_every > 0
            and (episode + 1) % config.validation_every == 0
            and split.validation.n_days > 0
        ):
            from imbarb.evaluate import backtest
            from imbarb.controllers import ValueController

            report = backtest(
                ValueController(nets, norm), split.validation, params, config.initial_soc
            )
            curve.points.append((episode + 1, report.profit_per_day_per_mwh))

    meta = {
        "agent": kind,
        "seed": config.seed,
        "episodes": config.episodes,
        "gamma": config.gamma,
        "hidden_dims": list(config.hidden_dims),
        "step_minutes": params.step_minutes,
    }
    if kind == "ddqn":
        meta.update({"n_atoms": config.n_atoms, "v_min": config.v_min, "v_max": config.v_max})
    ckpt = Checkpoint.from_net(nets.online, kind, norm_stats=norm, meta=meta)
    return ckpt, curve

"""Fixed-capacity experience replay ring."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Ring buffer over encoded transitions.

    Oldest entries are overwritten once capacity is reached.  Sampling is
    uniform with replacement from the valid region and requires at least the
    requested batch size to be present.
    """

    def __init__(self, capacity: int, feature_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self._capacity = capacity
        self._states = np.zeros((capacity, feature_dim))
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, feature_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._head = 0

    @property
    def capacity(self) -> int:
        return self._capacity

    def __len__(self) -> int:
        return self._size

    def push(self, state, action: int, reward: float, next_state, done: bool) -> None:
        i = self._head
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._dones[i] = done
        self._head = (i + 1) % self._capacity
        self._size = min(self._size + 1, self._capacity)

    def sample(self, rng: np.random.Generator, n: int) -> dict:
        if n > self._size:
            raise ValueError(f"buffer holds {self._size} transitions, cannot sample {n}")
        idx = rng.integers(0, self._size, size=n)
        return {
            "states": self._states[idx],
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "next_states": self._next_states[idx],
            "dones": self._dones[idx],
        }

    def data(self) -> dict:
        """Copies of the valid region (storage order, not insertion order)."""
        s = self._size
        return {
            "states": self._states[:s].copy(),
            "actions": self._actions[:s].copy(),
            "rewards": self._rewards[:s].copy(),
            "next_states": self._next_states[:s].copy(),
            "dones": self._dones[:s].copy(),
        }

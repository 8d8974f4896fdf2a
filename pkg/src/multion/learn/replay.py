"""Fixed-capacity FIFO replay of macro-step transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray  # (m_in, m_in, C) uint8
    enc: np.ndarray  # (N_enc,) float32
    action: np.ndarray  # (2,) goal in [0, 1]^2
    reward: float
    next_obs: np.ndarray
    next_enc: np.ndarray
    done: bool

    def __post_init__(self):
        for name in ("obs", "enc", "action", "next_obs", "next_enc"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass
class Batch:
    obs: np.ndarray
    enc: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    next_enc: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self._items:
            raise ValueError("replay buffer is empty")
        return rng.integers(0, len(self._items), size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        return collate([self._items[i] for i in self.sample_indices(n, rng)])


def collate(items: list[Transition]) -> Batch:
    if not items:
        raise ValueError("empty batch")
    return Batch(
        obs=np.stack([t.obs for t in items]),
        enc=np.stack([t.enc for t in items]).astype(np.float32),
        action=np.stack([t.action for t in items]).astype(np.float32),
        reward=np.array([t.reward for t in items], dtype=np.float32),
        next_obs=np.stack([t.next_obs for t in items]),
        next_enc=np.stack([t.next_enc for t in items]).astype(np.float32),
        done=np.array([t.done for t in items], dtype=np.float32),
    )

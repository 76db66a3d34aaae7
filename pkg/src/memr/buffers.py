"""Prioritized environment buffer and segmented model-rollout buffer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from memr.gaussian import PRIORITY_EPS
from memr.sumtree import SumTree


class StateSample(NamedTuple):
    indices: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    probs: np.ndarray
    versions: np.ndarray


class PolicyBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    round: int
    segment: int


@dataclass(frozen=True)
class BetaSchedule:
    total_steps: int
    beta_start: float = 0.4
    beta_end: float = 1.0

    def __call__(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be nonnegative")
        if self.total_steps <= 0:
            return self.beta_end
        frac = min(1.0, step / self.total_steps)
        return self.beta_start + (self.beta_end - self.beta_start) * frac


class EnvReplayBuffer:
    """Ring buffer of real transitions indexed by a sum tree over ``priority**alpha``."""

    def __init__(self, capacity, state_dim, action_dim, alpha=0.6, eps=PRIORITY_EPS,
                 kernel=None):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.tree = SumTree(self.capacity, kernel=kernel)
        self.states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.next_states = np.zeros((self.capacity, state_dim))
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.priorities = np.zeros(self.capacity)
        # bumped on every overwrite so stale sample indices can be detected
        self.versions = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.cursor = 0
        self.stale_updates = 0

    def __len__(self):
        return self.size

    def add(self, state, action, next_state, reward, done=False, priority=1.0) -> int:
        slot = self.cursor
        self.states[slot] = state
        self.actions[slot] = action
        self.next_states[slot] = next_state
        self.rewards[slot] = reward
        self.dones[slot] = done
        self.versions[slot] += 1
        self._write_priorities(np.array([slot]), np.array([priority], dtype=np.float64))
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def _write_priorities(self, slots, values):
        values = np.maximum(self.eps, values)
        self.priorities[slots] = values
        self.tree.set(slots, values**self.alpha)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves[: self.capacity]
        return leaves / self.tree.total

    def sample_states(self, m: int, beta: float, rng) -> StateSample:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if m < 1:
            raise ValueError("m must be positive")
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        total = self.tree.total
        width = total / m
        targets = (np.arange(m) + rng.random(m)) * width
        np.minimum(targets, np.nextafter(total, 0.0), out=targets)
        idx = self.tree.find(targets)
        leaf = self.tree.leaves[idx]
        probs = leaf / total
        # (N * P)^-beta written as (total / (N * leaf))^beta to avoid a rounding step
        raw = (total / (self.size * leaf)) ** beta
        weights = raw / raw.max()
        return StateSample(idx, self.states[idx].copy(), weights, probs,
                           self.versions[idx].copy())

    def update_priorities(self, indices, new_priorities, versions=None):
        indices = np.asarray(indices, dtype=np.int64)
        new_priorities = np.asarray(new_priorities, dtype=np.float64)
        ok = indices < self.size
        if versions is not None:
            ok &= self.versions[indices] == np.asarray(versions)
        self.stale_updates += int((~ok).sum())
        if ok.any():
            self._write_priorities(indices[ok], new_priorities[ok])

    def arrays(self):
        return {"states": self.states, "actions": self.actions,
                "next_states": self.next_states, "rewards": self.rewards,
                "dones": self.dones.astype(np.float64), "priorities": self.priorities,
                "versions": self.versions.astype(np.float64)}

    def meta(self):
        return {"capacity": self.capacity, "alpha": self.alpha, "eps": self.eps,
                "size": self.size, "cursor": self.cursor,
                "stale_updates": self.stale_updates}

    def restore(self, arrays, meta):
        for key in ("states", "actions", "next_states", "rewards", "priorities"):
            getattr(self, key)[...] = arrays[key]
        self.dones[...] = arrays["dones"].astype(bool)
        self.versions[...] = arrays["versions"].astype(np.int64)
        self.size, self.cursor = meta["size"], meta["cursor"]
        self.stale_updates = meta["stale_updates"]
        leaves = np.zeros(self.tree.capacity)
        leaves[: self.size] = self.priorities[: self.size] ** self.alpha
        self.tree.load_leaves(leaves)


class SegmentedModelBuffer:
    """Model rollouts stored in fixed-size segments, one per generation round.

    Policy batches are always drawn from a single segment so the importance
    weights inside a batch come from one sampling distribution.
    """

    def __init__(self, num_segments, segment_size, state_dim, action_dim):
        if num_segments < 1 or segment_size < 1:
            raise ValueError("segment count and size must be positive")
        self.num_segments = int(num_segments)
        self.segment_size = int(segment_size)
        shape = (self.num_segments, self.segment_size)
        self.states = np.zeros(shape + (state_dim,))
        self.actions = np.zeros(shape + (action_dim,))
        self.next_states = np.zeros(shape + (state_dim,))
        self.rewards = np.zeros(shape)
        self.weights = np.zeros(shape)
        self.rounds = np.full(self.num_segments, -1, dtype=np.int64)
        self.occupied = 0
        self.cursor = 0
        self.next_round = 0

    def __len__(self):
        return self.occupied * self.segment_size

    def push_segment(self, states, actions, next_states, rewards, weights) -> int:
        n = self.segment_size
        batch = (states, actions, next_states, rewards, weights)
        if any(len(x) != n for x in batch):
            raise ValueError(f"segment must hold exactly {n} samples")
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0) or np.any(weights > 1):
            raise ValueError("importance weights must lie in (0, 1]")
        seg = self.cursor
        self.states[seg] = states
        self.actions[seg] = actions
        self.next_states[seg] = next_states
        self.rewards[seg] = rewards
        self.weights[seg] = weights
        self.rounds[seg] = self.next_round
        self.next_round += 1
        self.cursor = (seg + 1) % self.num_segments
        self.occupied = min(self.occupied + 1, self.num_segments)
        return seg

    def sample_policy_batch(self, b: int, rng) -> PolicyBatch:
        if self.occupied == 0:
            raise ValueError("model buffer is empty")
        if not 1 <= b <= self.segment_size:
            raise ValueError(f"batch size must lie in [1, {self.segment_size}]")
        seg = int(rng.integers(self.occupied))
        rows = rng.permutation(self.segment_size)[:b]
        return PolicyBatch(self.states[seg, rows], self.actions[seg, rows],
                           self.next_states[seg, rows], self.rewards[seg, rows],
                           self.weights[seg, rows], int(self.rounds[seg]), seg)

    def state_action_pairs(self) -> np.ndarray:
        k = self.occupied
        s = self.states[:k].reshape(k * self.segment_size, self.states.shape[-1])
        a = self.actions[:k].reshape(k * self.segment_size, self.actions.shape[-1])
        return np.concatenate([s, a], axis=1)

    def arrays(self):
        return {"states": self.states, "actions": self.actions,
                "next_states": self.next_states, "rewards": self.rewards,
                "weights": self.weights, "rounds": self.rounds.astype(np.float64)}

    def meta(self):
        return {"num_segments": self.num_segments, "segment_size": self.segment_size,
                "occupied": self.occupied, "cursor": self.cursor,
                "next_round": self.next_round}

    def restore(self, arrays, meta):
        for key in ("states", "actions", "next_states", "rewards", "weights"):
            getattr(self, key)[...] = arrays[key]
        self.rounds[...] = arrays["rounds"].astype(np.int64)
        self.occupied, self.cursor = meta["occupied"], meta["cursor"]
        self.next_round = meta["next_round"]

"""Conditional Gaussian density of the model dataset's actions given states.

It is fitted online to each freshly generated rollout batch and only ever
used to score priorities, never to act.
"""

from __future__ import annotations

import math

import numpy as np

from memr.gaussian import PRIORITY_EPS, STD_FLOOR, DiagGaussian, priorities
from memr.nn import Net, Optimizer, gaussian_nll, soft_clamp

LOG_STD_MIN = math.log(STD_FLOOR)
LOG_STD_MAX = 2.0


class ModelDataPolicy:
    def __init__(self, obs_dim, action_dim, hidden=(64, 64), lr=1e-3, minibatch=128,
                 eps=PRIORITY_EPS, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.net = Net((obs_dim,) + tuple(hidden) + (2 * action_dim,), "tanh", rng=rng)
        self.opt = Optimizer(self.net, lr)
        self.minibatch = minibatch
        self.eps = eps
        self.updates = 0
        self.gradient_steps = 0

    def _heads(self, obs):
        out, tape = self.net.forward(obs)
        d = self.action_dim
        log_std, slope = soft_clamp(out[..., d:], LOG_STD_MIN, LOG_STD_MAX)
        return out[..., :d], log_std, slope, tape

    def conditionals(self, obs):
        mean, log_std, _, _ = self._heads(np.asarray(obs, dtype=np.float64))
        return mean, np.exp(log_std)

    def conditional(self, obs) -> DiagGaussian:
        mean, std = self.conditionals(obs)
        return DiagGaussian(mean, std)

    def priorities(self, obs, actions):
        mean, std = self.conditionals(obs)
        return priorities(mean, std, np.asarray(actions, dtype=np.float64), self.eps)

    def priority_of(self, obs, action) -> float:
        return float(self.priorities(np.atleast_2d(obs), np.atleast_2d(action))[0])

    def nll(self, obs, actions) -> float:
        mean, log_std, _, _ = self._heads(obs)
        return gaussian_nll(mean, 2.0 * log_std, actions)[0]

    def loss_and_grads(self, obs, actions):
        mean, log_std, slope, tape = self._heads(obs)
        loss, d_mean, d_log_var = gaussian_nll(mean, 2.0 * log_std, actions)
        d_out = np.concatenate([d_mean, 2.0 * d_log_var * slope], axis=-1)
        grads, _ = self.net.backward(tape, d_out)
        return loss, grads

    def fit_online(self, obs, actions, d_epochs=2, rng=None) -> float:
        """``d_epochs`` shuffled minibatch passes over this batch only."""
        obs = np.asarray(obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        n = len(obs)
        if n == 0:
            raise ValueError("empty batch")
        if d_epochs < 1:
            raise ValueError("d_epochs must be at least 1")
        rng = np.random.default_rng(0) if rng is None else rng
        for _ in range(d_epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.minibatch):
                rows = order[start:start + self.minibatch]
                _, grads = self.loss_and_grads(obs[rows], actions[rows])
                self.opt.step(grads)
                self.gradient_steps += 1
        self.updates += 1
        return self.nll(obs, actions)

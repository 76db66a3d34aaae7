"""Soft actor-critic with twin critics, Polyak targets and auto-tuned temperature.

Critic losses accept per-sample importance weights.  Loss functions that
need policy noise take it as an explicit argument (``noise``) so they are
deterministic and can be checked against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from memr.nn import (AdamState, Net, NumericalError, Optimizer, adam_step, polyak,
                     soft_clamp)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    hidden: tuple = (128, 128)
    init_temperature: float = 0.2
    target_entropy: float | None = None
    batch_size: int = 256

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) without cancellation
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class SacAgent:
    def __init__(self, obs_dim, action_dim, action_limit, cfg: SacConfig | None = None,
                 rng=None):
        self.cfg = cfg or SacConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.action_limit = float(action_limit)
        hidden = tuple(self.cfg.hidden)
        self.actor = Net((obs_dim,) + hidden + (2 * action_dim,), "relu", rng=rng)
        self.q1 = Net((obs_dim + action_dim,) + hidden + (1,), "relu", rng=rng)
        self.q2 = Net((obs_dim + action_dim,) + hidden + (1,), "relu", rng=rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(self.cfg.init_temperature)])
        self.actor_opt = Optimizer(self.actor, self.cfg.actor_lr)
        self.q1_opt = Optimizer(self.q1, self.cfg.critic_lr)
        self.q2_opt = Optimizer(self.q2, self.cfg.critic_lr)
        self.alpha_opt = AdamState.for_params([self.log_alpha], lr=self.cfg.alpha_lr)
        self.target_entropy = (-float(action_dim) if self.cfg.target_entropy is None
                               else float(self.cfg.target_entropy))
        self.rng = rng
        self.updates = 0

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # policy ----------------------------------------------------------------

    def _dist(self, obs):
        out, tape = self.actor.forward(obs)
        d = self.action_dim
        mean = out[..., :d]
        log_std, slope = soft_clamp(out[..., d:], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, slope, tape

    def _squash(self, mean, log_std, noise):
        std = np.exp(log_std)
        u = mean + std * noise
        y = np.tanh(u)
        logp = np.sum(-0.5 * noise**2 - log_std - HALF_LOG_2PI
                      - math.log(self.action_limit) - _log1m_tanh_sq(u), axis=-1)
        return self.action_limit * y, logp, (u, y, std)

    def act(self, obs, deterministic=False, rng=None):
        obs = np.asarray(obs, dtype=np.float64)
        mean, log_std, _, _ = self._dist(obs)
        if deterministic:
            return self.action_limit * np.tanh(mean)
        rng = self.rng if rng is None else rng
        action, _, _ = self._squash(mean, log_std, rng.standard_normal(mean.shape))
        return action

    def sample(self, obs, noise):
        """Reparameterized action and log-density for given standard-normal noise."""
        mean, log_std, _, _ = self._dist(obs)
        action, logp, _ = self._squash(mean, log_std, noise)
        return action, logp

    def log_prob(self, obs, action):
        """Log-density of a squashed action (used for quadrature checks)."""
        mean, log_std, _, _ = self._dist(obs)
        y = np.clip(np.asarray(action) / self.action_limit, -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(y)
        noise = (u - mean) / np.exp(log_std)
        return self._squash(mean, log_std, noise)[1]

    # critics ---------------------------------------------------------------

    def q_values(self, obs, action, target=False):
        x = np.concatenate([obs, action], axis=-1)
        n1, n2 = (self.q1_target, self.q2_target) if target else (self.q1, self.q2)
        return n1(x)[..., 0], n2(x)[..., 0]

    def td_target(self, next_obs, rewards, noise):
        a2, logp2 = self.sample(next_obs, noise)
        t1, t2 = self.q_values(next_obs, a2, target=True)
        y = rewards + self.cfg.gamma * (np.minimum(t1, t2) - self.temperature * logp2)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite TD target (max |r|={np.abs(rewards).max():.3g})")
        return y

    def critic_loss_and_grads(self, obs, actions, targets, weights):
        """Weighted squared TD error ``(1/B) sum w (Q - y)^2`` for each critic."""
        x = np.concatenate([obs, actions], axis=-1)
        b = x.shape[0]
        out = []
        for net in (self.q1, self.q2):
            q, tape = net.forward(x)
            err = q[:, 0] - targets
            loss = float(np.sum(weights * err * err) / b)
            grads, _ = net.backward(tape, (2.0 * weights * err / b)[:, None])
            out.append((loss, grads))
        return out

    def q_update(self, obs, actions, rewards, next_obs, weights, rng=None) -> float:
        rng = self.rng if rng is None else rng
        y = self.td_target(next_obs, rewards, rng.standard_normal((len(obs), self.action_dim)))
        (l1, g1), (l2, g2) = self.critic_loss_and_grads(obs, actions, y, weights)
        self.q1_opt.step(g1)
        self.q2_opt.step(g2)
        return 0.5 * (l1 + l2)

    # actor -----------------------------------------------------------------

    def actor_loss_and_grads(self, obs, noise):
        """Reparameterized surrogate ``mean(alpha * log pi(a|s) - min Q(s, a))``."""
        b = obs.shape[0]
        alpha = self.temperature
        mean, log_std, slope, tape = self._dist(obs)
        action, logp, (u, y, std) = self._squash(mean, log_std, noise)
        x = np.concatenate([obs, action], axis=-1)
        q1, t1 = self.q1.forward(x)
        q2, t2 = self.q2.forward(x)
        use1 = q1[:, 0] <= q2[:, 0]
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * logp - qmin))
        _, dx1 = self.q1.backward(t1, np.where(use1, -1.0 / b, 0.0)[:, None])
        _, dx2 = self.q2.backward(t2, np.where(use1, 0.0, -1.0 / b)[:, None])
        d_action = (dx1 + dx2)[:, self.obs_dim:]
        d_logp = alpha / b
        d_u = d_action * self.action_limit * (1.0 - y * y) + d_logp * 2.0 * y
        d_mean = d_u
        d_log_std = (d_u * std * noise - d_logp) * slope
        grads, _ = self.actor.backward(tape, np.concatenate([d_mean, d_log_std], axis=-1))
        return loss, grads

    def policy_update(self, obs, rng=None) -> float:
        rng = self.rng if rng is None else rng
        loss, grads = self.actor_loss_and_grads(obs, rng.standard_normal((len(obs), self.action_dim)))
        self.actor_opt.step(grads)
        return loss

    def temperature_grad(self, obs, noise) -> float:
        _, logp = self.sample(obs, noise)
        # d/d(log alpha) of mean(-log_alpha * (log pi + target))
        return -float(np.mean(logp + self.target_entropy))

    def temperature_update(self, obs, rng=None) -> float:
        rng = self.rng if rng is None else rng
        g = self.temperature_grad(obs, rng.standard_normal((len(obs), self.action_dim)))
        adam_step(self.alpha_opt, [self.log_alpha], [np.array([g])])
        return self.temperature

    def target_sync(self, tau=None):
        tau = self.cfg.tau if tau is None else tau
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        polyak(self.q1_target, self.q1, tau)
        polyak(self.q2_target, self.q2, tau)

    def update(self, obs, actions, rewards, next_obs, weights, rng=None):
        """One full SAC round: critics, actor, temperature, targets."""
        critic = self.q_update(obs, actions, rewards, next_obs, weights, rng)
        actor = self.policy_update(obs, rng)
        self.temperature_update(obs, rng)
        self.target_sync()
        self.updates += 1
        return critic, actor

    # serialization ---------------------------------------------------------

    def nets(self):
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def optimizers(self):
        return {"actor": self.actor_opt.state, "q1": self.q1_opt.state,
                "q2": self.q2_opt.state, "alpha": self.alpha_opt}

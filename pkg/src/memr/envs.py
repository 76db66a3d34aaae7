"""Deterministic continuous-control environments and Monte Carlo evaluation.

Dynamics are pure functions of ``(state, action)``; all methods accept a
single state vector or a batch of states with a leading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: np.ndarray | float
    done: bool


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    obs_dim: int
    action_dim: int
    action_limit: float
    horizon: int = 200
    reward_bound: float = 1.0
    # per-dimension observation scale used to standardize diagnostics
    obs_scale: tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.action_limit) or self.action_limit <= 0:
            raise ValueError("action bounds must be finite and symmetric")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite environment state")


class Pendulum:
    """Torque-limited swing-up; theta = 0 is upright.

    State is ``(theta, theta_dot)``, observation ``(cos, sin, theta_dot)``.
    Integration is semi-implicit Euler: velocity first, then angle with the
    new velocity.
    """

    g = 10.0
    m = 1.0
    l = 1.0
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self, horizon=200, dt=0.05):
        self.dt = dt
        self.spec = EnvSpec("pendulum", 2, 3, 1, self.max_torque, horizon,
                            reward_bound=math.pi**2 + 0.1 * self.max_speed**2
                            + 0.001 * self.max_torque**2,
                            obs_scale=(1.0, 1.0, self.max_speed))

    def reset(self, seed=None, n=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        size = () if n is None else (n,)
        theta = rng.uniform(-np.pi, np.pi, size=size)
        theta_dot = rng.uniform(-1.0, 1.0, size=size)
        return np.stack([theta, theta_dot], axis=-1)

    def observe(self, state):
        state = np.asarray(state, dtype=np.float64)
        th, thdot = state[..., 0], state[..., 1]
        return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)

    def reward(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        u = np.clip(np.asarray(action, dtype=np.float64)[..., 0], -self.max_torque, self.max_torque)
        th, thdot = state[..., 0], state[..., 1]
        return -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)

    def step(self, state, action, t=0) -> StepResult:
        state = np.asarray(state, dtype=np.float64)
        _check_finite(state)
        u = np.clip(np.asarray(action, dtype=np.float64)[..., 0], -self.max_torque, self.max_torque)
        th, thdot = state[..., 0], state[..., 1]
        reward = self.reward(state, action)
        acc = 3.0 * self.g / (2.0 * self.l) * np.sin(th) + 3.0 / (self.m * self.l**2) * u
        new_thdot = np.clip(thdot + acc * self.dt, -self.max_speed, self.max_speed)
        new_th = th + new_thdot * self.dt
        nxt = np.stack([new_th, new_thdot], axis=-1)
        _check_finite(nxt)
        return StepResult(nxt, reward, t + 1 >= self.spec.horizon)

    def energy(self, state):
        state = np.asarray(state, dtype=np.float64)
        return 0.5 * state[..., 1] ** 2 + 1.5 * self.g / self.l * np.cos(state[..., 0])


class PointMass:
    """2-D double integrator driven toward the origin.

    State and observation are ``(x, y, vx, vy)``; starts at rest uniformly
    in ``[-1, 1]^2``.
    """

    max_force = 1.0

    def __init__(self, horizon=200, dt=0.05, goal=(0.0, 0.0)):
        self.dt = dt
        self.goal = np.asarray(goal, dtype=np.float64)
        self.spec = EnvSpec("pointmass", 4, 4, 2, self.max_force, horizon, reward_bound=10.0,
                            obs_scale=(1.0, 1.0, 1.0, 1.0))

    def reset(self, seed=None, n=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        size = (2,) if n is None else (n, 2)
        pos = rng.uniform(-1.0, 1.0, size=size)
        return np.concatenate([pos, np.zeros_like(pos)], axis=-1)

    def observe(self, state):
        return np.asarray(state, dtype=np.float64).copy()

    def reward(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        a = np.clip(np.asarray(action, dtype=np.float64), -self.max_force, self.max_force)
        d = state[..., :2] - self.goal
        return -(np.sum(d * d, axis=-1) + 0.01 * np.sum(a * a, axis=-1))

    def step(self, state, action, t=0) -> StepResult:
        state = np.asarray(state, dtype=np.float64)
        _check_finite(state)
        a = np.clip(np.asarray(action, dtype=np.float64), -self.max_force, self.max_force)
        reward = self.reward(state, a)
        vel = state[..., 2:] + a * self.dt
        pos = state[..., :2] + vel * self.dt
        nxt = np.concatenate([pos, vel], axis=-1)
        _check_finite(nxt)
        return StepResult(nxt, reward, t + 1 >= self.spec.horizon)


ENVIRONMENTS = {"pendulum": Pendulum, "pointmass": PointMass}


def make_env(name: str, **kwargs):
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def evaluate_policy(env, agent, episodes: int, gamma: float, seed) -> tuple[float, float]:
    """Mean undiscounted and discounted return of the deterministic policy.

    Episodes run in lockstep as one batch and are truncated at the horizon.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    act = agent if callable(agent) and not hasattr(agent, "act") else (
        lambda obs: agent.act(obs, deterministic=True))
    state = env.reset(seed, n=episodes)
    ret = np.zeros(episodes)
    disc = np.zeros(episodes)
    discount = 1.0
    for t in range(env.spec.horizon):
        action = np.asarray(act(env.observe(state)), dtype=np.float64)
        res = env.step(state, action, t)
        ret += res.reward
        disc += discount * res.reward
        discount *= gamma
        state = res.next_state
    return float(ret.mean()), float(disc.mean())

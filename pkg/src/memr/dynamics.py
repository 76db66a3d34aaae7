"""Probabilistic ensemble over ``(delta_state, reward)`` trained by maximum likelihood.

The model is only ever used for single-step predictions from real states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from memr.nn import Net, Optimizer, gaussian_nll, soft_clamp, soft_clamp_inverse

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 2.0
NORM_STD_FLOOR = 1e-6


class InsufficientDataError(ValueError):
    pass


class Normalizer:
    def __init__(self, dim):
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)

    def fit(self, x):
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), NORM_STD_FLOOR)

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


@dataclass
class TrainReport:
    holdout_nll: np.ndarray
    holdout_mse: np.ndarray
    epochs: int
    history: list = field(default_factory=list)

    @property
    def validation_error(self) -> float:
        return validation_error(self)


def validation_error(report: TrainReport) -> float:
    """Mean holdout MSE across members; the model's generalization estimate."""
    return float(np.mean(report.holdout_mse))


@dataclass
class DynamicsConfig:
    ensemble_size: int = 5
    hidden: tuple = (200, 200, 200, 200)
    lr: float = 1e-3
    batch_size: int = 256
    holdout_fraction: float = 0.1
    max_holdout: int = 2000
    max_epochs: int = 200
    patience: int = 5
    min_data: int = 250


class EnsembleDynamics:
    def __init__(self, obs_dim, action_dim, cfg: DynamicsConfig | None = None, rng=None):
        self.cfg = cfg or DynamicsConfig()
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.out_dim = obs_dim + 1
        self.in_norm = Normalizer(obs_dim + action_dim)
        self.out_norm = Normalizer(self.out_dim)
        self.trained = False
        self.train_calls = 0
        self._init_net(np.random.default_rng(0) if rng is None else rng)

    def _init_net(self, rng):
        cfg = self.cfg
        sizes = (self.obs_dim + self.action_dim,) + tuple(cfg.hidden) + (2 * self.out_dim,)
        self.net = Net(sizes, "relu", rng=rng, ensemble=cfg.ensemble_size)
        head = self.net.layers[-1]
        head.weight[..., self.out_dim:] = 0.0
        head.bias[..., self.out_dim:] = soft_clamp_inverse(-1.0, LOG_VAR_MIN, LOG_VAR_MAX)
        self.opt = Optimizer(self.net, cfg.lr)

    def reset(self, rng):
        self._init_net(rng)
        self.trained = False

    @property
    def ensemble_size(self):
        return self.cfg.ensemble_size

    def _heads(self, x_norm):
        out, tape = self.net.forward(x_norm)
        mean = out[..., : self.out_dim]
        log_var, slope = soft_clamp(out[..., self.out_dim:], LOG_VAR_MIN, LOG_VAR_MAX)
        return mean, log_var, slope, tape

    def predict(self, obs, actions):
        """Per-member ``(mean, log_var)`` of the normalized targets, shape ``(E, n, out)``."""
        x = self.in_norm.normalize(np.concatenate([obs, actions], axis=-1))
        mean, log_var, _, _ = self._heads(x)
        return mean, log_var

    def loss_and_grads(self, xb, yb):
        """NLL of normalized targets; ``xb`` is ``(E, B, in)`` or shared ``(B, in)``."""
        mean, log_var, slope, tape = self._heads(xb)
        loss, d_mean, d_log_var = gaussian_nll(mean, log_var, np.broadcast_to(yb, mean.shape))
        grads, _ = self.net.backward(tape, np.concatenate([d_mean, d_log_var * slope], axis=-1))
        return loss, grads

    def _step(self, xb, yb):
        loss, grads = self.loss_and_grads(xb, yb)
        self.opt.step(grads)
        return loss

    def _evaluate(self, x, y):
        mean, log_var, _, _ = self._heads(x)
        inv = np.exp(-log_var)
        diff = mean - y
        nll = 0.5 * (diff * diff * inv + log_var + np.log(2 * np.pi))
        raw_diff = diff * self.out_norm.std
        return nll.sum(axis=-1).mean(axis=-1), (raw_diff**2).mean(axis=(-1, -2))

    def train(self, obs, actions, next_obs, rewards, rng) -> TrainReport:
        cfg = self.cfg
        n = len(obs)
        if n < cfg.min_data:
            raise InsufficientDataError(f"need at least {cfg.min_data} transitions, have {n}")
        x_raw = np.concatenate([obs, actions], axis=-1)
        y_raw = np.concatenate([next_obs - obs, np.asarray(rewards)[:, None]], axis=-1)
        self.in_norm.fit(x_raw)
        self.out_norm.fit(y_raw)
        x = self.in_norm.normalize(x_raw)
        y = self.out_norm.normalize(y_raw)

        order = rng.permutation(n)
        n_hold = min(cfg.max_holdout, max(1, int(round(cfg.holdout_fraction * n))))
        hold, train = order[:n_hold], order[n_hold:]
        e = cfg.ensemble_size
        boot = train[rng.integers(len(train), size=(e, len(train)))]
        members = np.arange(e)[:, None]

        best_nll, best_params = None, None
        history = []
        stale = 0
        epochs = 0
        nll, mse = self._evaluate(x[hold], y[hold])
        history.append(float(nll.mean()))
        best_nll, best_params = nll.mean(), [p.copy() for p in self.net.params()]
        while epochs < cfg.max_epochs and stale < cfg.patience:
            perm = np.argsort(rng.random(boot.shape), axis=1)
            shuffled = boot[members, perm]
            for start in range(0, shuffled.shape[1], cfg.batch_size):
                rows = shuffled[:, start:start + cfg.batch_size]
                self._step(x[rows], y[rows])
            epochs += 1
            nll, _ = self._evaluate(x[hold], y[hold])
            history.append(float(nll.mean()))
            if nll.mean() < best_nll - 1e-4 * abs(best_nll):
                best_nll, best_params, stale = nll.mean(), [p.copy() for p in self.net.params()], 0
            else:
                stale += 1
        self.net.set_params(best_params)
        nll, mse = self._evaluate(x[hold], y[hold])
        self.trained = True
        self.train_calls += 1
        return TrainReport(nll, mse, epochs, history)

    def rollout_one_step(self, obs, actions, rng):
        """Sample ``(next_obs, reward)`` from one uniformly chosen member per row."""
        if not self.trained:
            raise RuntimeError("dynamics model has not been trained")
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        n = len(obs)
        member = rng.integers(self.cfg.ensemble_size, size=n)
        mean, log_var = self.predict(obs, actions)
        rows = np.arange(n)
        mu, lv = mean[member, rows], log_var[member, rows]
        z = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
        delta = self.out_norm.denormalize(z)
        return obs + delta[:, : self.obs_dim], delta[:, self.obs_dim]

    def arrays(self):
        return self.net.params() + [self.in_norm.mean, self.in_norm.std,
                                    self.out_norm.mean, self.out_norm.std]

    def restore(self, arrays, trained):
        k = len(self.net.params())
        self.net.set_params(arrays[:k])
        self.in_norm.mean, self.in_norm.std, self.out_norm.mean, self.out_norm.std = (
            a.copy() for a in arrays[k:k + 4])
        self.trained = trained

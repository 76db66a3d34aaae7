"""Dyna-style training loop with maximum-entropy prioritized single-step rollouts.

Per environment step, once the dynamics model has been fitted:

1. retrain the ensemble every ``model_update_freq`` steps,
2. act, score the new transition with the model-data policy and store it,
3. draw ``M`` real states by priority with importance weights,
4. roll each forward one step through the model under fresh SAC actions,
5. store the ``M`` rollouts as one segment of the model buffer,
6. refit the model-data policy on those ``M`` pairs and re-score the states,
7. run ``G`` SAC updates, each on a batch from a single segment.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from memr import checkpoint, nn
from memr.buffers import BetaSchedule, EnvReplayBuffer, SegmentedModelBuffer
from memr.dynamics import DynamicsConfig, EnsembleDynamics
from memr.envs import evaluate_policy, make_env
from memr.gaussian import knn_entropy
from memr.model_policy import ModelDataPolicy
from memr.sac import SacAgent, SacConfig

STREAMS = ("init", "env", "act", "replay", "model", "psi", "sac", "diag")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    env: str = "pendulum"
    seed: int = 0
    total_num_steps: int = 15000
    model_update_freq: int = 250
    rollouts_per_step: int = 40
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    beta_anneal_steps: int = 0
    psi_epochs: int = 2
    policy_updates: int = 5
    batch_size: int = 40
    model_dataset_size: int = 40000
    env_capacity: int = 100000
    initial_random_steps: int = 1000
    eval_interval: int = 1000
    eval_episodes: int = 10
    horizon: int = 200
    gamma: float = 0.99
    tau: float = 0.005
    sac_lr: float = 1e-3
    sac_hidden: tuple = (64, 64)
    init_temperature: float = 0.2
    ensemble_size: int = 5
    model_hidden: tuple = (64, 64)
    model_lr: float = 1e-3
    model_batch_size: int = 256
    model_max_epochs: int = 25
    model_patience: int = 5
    model_min_data: int = 250
    model_warm_start: bool = True
    psi_hidden: tuple = (64, 64)
    psi_lr: float = 1e-3
    psi_minibatch: int = 128
    real_data_fraction: float = 0.0
    diversity_samples: int = 2000
    checkpoint_interval: int = 0
    debug: bool = False

    def __post_init__(self):
        self.sac_hidden = tuple(self.sac_hidden)
        self.model_hidden = tuple(self.model_hidden)
        self.psi_hidden = tuple(self.psi_hidden)
        self.validate()

    def validate(self):
        counts = ("model_update_freq", "rollouts_per_step", "psi_epochs", "policy_updates",
                  "batch_size", "model_dataset_size", "env_capacity", "eval_interval",
                  "eval_episodes", "horizon", "ensemble_size", "model_batch_size",
                  "model_max_epochs", "model_patience", "model_min_data", "psi_minibatch",
                  "diversity_samples")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("total_num_steps", "initial_random_steps", "beta_anneal_steps",
                     "checkpoint_interval"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.model_dataset_size % self.rollouts_per_step:
            raise ConfigError("model_dataset_size must be divisible by rollouts_per_step")
        if self.batch_size > self.rollouts_per_step:
            raise ConfigError("batch_size cannot exceed rollouts_per_step (one segment)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        for name in ("beta_start", "beta_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.beta_end < self.beta_start:
            raise ConfigError("beta_end must be >= beta_start")
        if not 0.0 <= self.real_data_fraction < 1.0:
            raise ConfigError("real_data_fraction must lie in [0, 1)")
        if self.total_num_steps > self.initial_random_steps and \
                self.initial_random_steps < self.model_min_data:
            raise ConfigError("initial_random_steps must be >= model_min_data")
        if not 0.0 < self.gamma < 1.0 or not 0.0 < self.tau <= 1.0:
            raise ConfigError("gamma must lie in (0, 1) and tau in (0, 1]")

    @classmethod
    def paper_scale(cls, **overrides):
        base = dict(rollouts_per_step=400, batch_size=256, model_dataset_size=1_000_000,
                    sac_hidden=(256, 256), model_hidden=(200, 200, 200, 200),
                    psi_hidden=(64, 64), model_max_epochs=200, sac_lr=3e-4,
                    env_capacity=1_000_000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, values: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


@dataclass
class MetricsRow:
    step: int
    eval_return: float
    discounted_return: float
    model_mse: float
    mean_priority: float
    knn_entropy: float
    critic_loss: float
    actor_loss: float
    temperature: float
    policy_updates: int
    model_rollouts: int
    wall_seconds: float


METRIC_COLUMNS = [f.name for f in fields(MetricsRow)]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only CSV with a single header row."""

    def __init__(self, path):
        self.path = path
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def append(self, row: MetricsRow):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(getattr(row, c)) for c in METRIC_COLUMNS])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty metrics file")
        if header != METRIC_COLUMNS:
            raise ValueError(f"{path}: row 1: unexpected header {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(METRIC_COLUMNS):
                raise ValueError(f"{path}: row {lineno}: expected {len(METRIC_COLUMNS)} fields")
            try:
                rows.append({c: float(v) for c, v in zip(METRIC_COLUMNS, rec)})
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric field") from None
    return rows


class Trainer:
    def __init__(self, cfg: TrainerConfig, metrics_path=None, checkpoint_path=None):
        cfg.validate()
        self.cfg = cfg
        self.env = make_env(cfg.env, horizon=cfg.horizon)
        spec = self.env.spec
        od, ad = spec.obs_dim, spec.action_dim
        seqs = np.random.SeedSequence(cfg.seed).spawn(len(STREAMS))
        self.rngs = {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, seqs)}
        init = self.rngs["init"]
        self.agent = SacAgent(od, ad, spec.action_limit,
                              SacConfig(gamma=cfg.gamma, tau=cfg.tau, actor_lr=cfg.sac_lr,
                                        critic_lr=cfg.sac_lr, alpha_lr=cfg.sac_lr,
                                        hidden=cfg.sac_hidden,
                                        init_temperature=cfg.init_temperature,
                                        batch_size=cfg.batch_size),
                              rng=init)
        self.model = EnsembleDynamics(od, ad, DynamicsConfig(
            ensemble_size=cfg.ensemble_size, hidden=cfg.model_hidden, lr=cfg.model_lr,
            batch_size=cfg.model_batch_size, max_epochs=cfg.model_max_epochs,
            patience=cfg.model_patience, min_data=cfg.model_min_data), rng=init)
        self.psi = ModelDataPolicy(od, ad, cfg.psi_hidden, cfg.psi_lr, cfg.psi_minibatch, rng=init)
        self.env_buf = EnvReplayBuffer(cfg.env_capacity, od, ad, cfg.alpha)
        self.model_buf = SegmentedModelBuffer(cfg.model_dataset_size // cfg.rollouts_per_step,
                                              cfg.rollouts_per_step, od, ad)
        self.scale = np.array(tuple(spec.obs_scale) + (spec.action_limit,) * ad)
        self.t = 0
        self.state = self.env.reset(self.rngs["env"])
        self.episode_step = 0
        self.rollouts = 0
        self.policy_updates = 0
        self.model_mse = math.nan
        self.last_report = None
        self.rows: list[MetricsRow] = []
        self._reset_accumulators()
        self.metrics = MetricsWriter(metrics_path) if metrics_path else None
        self.checkpoint_path = checkpoint_path
        self._clock = time.perf_counter()
        self._elapsed = 0.0

    @property
    def beta(self) -> BetaSchedule:
        # follows the live config so extending a resumed run re-stretches the anneal
        cfg = self.cfg
        return BetaSchedule(cfg.beta_anneal_steps or cfg.total_num_steps,
                            cfg.beta_start, cfg.beta_end)

    def _reset_accumulators(self):
        self.acc = {"priority": 0.0, "priority_n": 0, "critic": 0.0, "actor": 0.0, "updates": 0}

    # algorithm -------------------------------------------------------------

    def _train_model(self):
        cfg, buf = self.cfg, self.env_buf
        n = buf.size
        if not cfg.model_warm_start and self.model.trained:
            self.model.reset(self.rngs["model"])
        report = self.model.train(buf.states[:n], buf.actions[:n], buf.next_states[:n],
                                  buf.rewards[:n], self.rngs["model"])
        self.last_report = report
        self.model_mse = report.validation_error

    def step(self):
        cfg = self.cfg
        t = self.t + 1
        warm = t > cfg.initial_random_steps
        if warm and self.env_buf.size >= cfg.model_min_data and (
                not self.model.trained or t % cfg.model_update_freq == 0):
            self._train_model()

        obs = self.env.observe(self.state)
        spec = self.env.spec
        if warm:
            action = self.agent.act(obs, rng=self.rngs["act"])
        else:
            action = self.rngs["act"].uniform(-spec.action_limit, spec.action_limit, spec.action_dim)
        res = self.env.step(self.state, action, self.episode_step)
        next_obs = self.env.observe(res.next_state)
        p = self.psi.priority_of(obs, action) if self.psi.updates > 0 else 1.0
        self.env_buf.add(obs, action, next_obs, float(res.reward), res.done, p)
        self.episode_step += 1
        if res.done:
            self.state = self.env.reset(self.rngs["env"])
            self.episode_step = 0
        else:
            self.state = res.next_state

        if self.model.trained:
            self._rollouts_and_updates(t)
        self.t = t

    def _rollouts_and_updates(self, t):
        cfg = self.cfg
        m = cfg.rollouts_per_step
        sample = self.env_buf.sample_states(m, self.beta(t), self.rngs["replay"])
        states = sample.states
        if cfg.debug:
            assert np.array_equal(states, self.env_buf.states[sample.indices]), \
                "rollout start states must be real environment states"
        actions = self.agent.act(states, rng=self.rngs["act"])
        next_states, rewards = self.model.rollout_one_step(states, actions, self.rngs["model"])
        self.model_buf.push_segment(states, actions, next_states, rewards, sample.weights)
        self.rollouts += m
        self.acc["priority"] += float(self.env_buf.priorities[sample.indices].sum())
        self.acc["priority_n"] += m

        self.psi.fit_online(states, actions, cfg.psi_epochs, self.rngs["psi"])
        fresh = self.psi.priorities(states, actions)
        self.env_buf.update_priorities(sample.indices, fresh, sample.versions)
        if cfg.debug:
            live = self.env_buf.versions[sample.indices] == sample.versions
            assert np.allclose(self.env_buf.priorities[sample.indices][live],
                               np.maximum(self.env_buf.eps, fresh[live]), rtol=0, atol=0)

        rng = self.rngs["sac"]
        n_real = int(round(cfg.real_data_fraction * cfg.batch_size))
        for _ in range(cfg.policy_updates):
            batch = self.model_buf.sample_policy_batch(cfg.batch_size - n_real, rng)
            s, a, s2, r, w = (batch.states, batch.actions, batch.next_states,
                              batch.rewards, batch.weights)
            if n_real:
                idx = rng.integers(self.env_buf.size, size=n_real)
                buf = self.env_buf
                s = np.concatenate([s, buf.states[idx]])
                a = np.concatenate([a, buf.actions[idx]])
                s2 = np.concatenate([s2, buf.next_states[idx]])
                r = np.concatenate([r, buf.rewards[idx]])
                w = np.concatenate([w, np.ones(n_real)])
            critic, actor = self.agent.update(s, a, r, s2, w, rng)
            self.policy_updates += 1
            self.acc["critic"] += critic
            self.acc["actor"] += actor
            self.acc["updates"] += 1

    # metrics ---------------------------------------------------------------

    def diversity(self) -> float:
        """k-NN joint entropy of a subsample of model-buffer (state, action) pairs."""
        pairs = self.model_buf.state_action_pairs()
        if len(pairs) < 4:
            return math.nan
        n = min(self.cfg.diversity_samples, len(pairs))
        rows = self.rngs["diag"].choice(len(pairs), size=n, replace=False)
        return knn_entropy(pairs[rows] / self.scale, k=3)

    def _metrics_row(self) -> MetricsRow:
        ret, disc = evaluate_policy(self.env, self.agent, self.cfg.eval_episodes,
                                    self.cfg.gamma, self.cfg.seed + 10_000)
        acc = self.acc
        upd = max(acc["updates"], 1)
        now = time.perf_counter()
        self._elapsed += now - self._clock
        self._clock = now
        row = MetricsRow(
            step=self.t, eval_return=ret, discounted_return=disc,
            model_mse=float(self.model_mse),
            mean_priority=(acc["priority"] / acc["priority_n"]) if acc["priority_n"] else math.nan,
            knn_entropy=self.diversity(),
            critic_loss=acc["critic"] / upd if acc["updates"] else math.nan,
            actor_loss=acc["actor"] / upd if acc["updates"] else math.nan,
            temperature=self.agent.temperature,
            policy_updates=self.policy_updates, model_rollouts=self.rollouts,
            wall_seconds=round(self._elapsed, 3))
        self._reset_accumulators()
        return row

    def run(self) -> list[MetricsRow]:
        cfg = self.cfg
        while self.t < cfg.total_num_steps:
            try:
                self.step()
            except Exception as exc:
                raise TrainingError(f"step {self.t + 1}: {type(exc).__name__}: {exc}") from exc
            if self.t % cfg.eval_interval == 0 or self.t == cfg.total_num_steps:
                row = self._metrics_row()
                self.rows.append(row)
                if self.metrics:
                    self.metrics.append(row)
            if self.checkpoint_path and cfg.checkpoint_interval and \
                    self.t % cfg.checkpoint_interval == 0:
                self.save(self.checkpoint_path)
        return self.rows

    # checkpoints -----------------------------------------------------------

    def _nets(self):
        nets = {f"sac.{k}": v for k, v in self.agent.nets().items()}
        nets["psi"] = self.psi.net
        return nets

    def _optimizers(self):
        opts = {f"sac.{k}": v for k, v in self.agent.optimizers().items()}
        opts["psi"] = self.psi.opt.state
        opts["model"] = self.model.opt.state
        return opts

    def save(self, path):
        sections = {"config": json.dumps(self.cfg.to_dict(), sort_keys=True).encode()}
        counters = {
            "t": self.t, "state": self.state.tolist(), "episode_step": self.episode_step,
            "rollouts": self.rollouts, "policy_updates": self.policy_updates,
            "model_mse": self.model_mse, "acc": self.acc,
            "rows": [asdict(r) for r in self.rows], "elapsed": self._elapsed,
            "model_trained": self.model.trained, "model_train_calls": self.model.train_calls,
            "psi_updates": self.psi.updates, "psi_steps": self.psi.gradient_steps,
            "sac_updates": self.agent.updates,
            "env_buffer": self.env_buf.meta(), "model_buffer": self.model_buf.meta(),
            "optim": {k: v.scalars() for k, v in self._optimizers().items()},
        }
        sections["counters"] = json.dumps(counters).encode()
        sections["rng"] = json.dumps({k: g.bit_generator.state for k, g in self.rngs.items()}).encode()
        for name, net in self._nets().items():
            sections[f"net:{name}"] = nn.to_blob(net.params())
        sections["net:sac.log_alpha"] = nn.to_blob([self.agent.log_alpha])
        sections["net:model"] = nn.to_blob(self.model.arrays())
        for name, opt in self._optimizers().items():
            sections[f"opt:{name}"] = nn.to_blob(opt.arrays())
        sections["buffer:env"] = nn.to_blob(list(self.env_buf.arrays().values()))
        sections["buffer:model"] = nn.to_blob(list(self.model_buf.arrays().values()))
        checkpoint.write_container(path, sections)

    @classmethod
    def load(cls, path, metrics_path=None, checkpoint_path=None) -> "Trainer":
        sections = checkpoint.read_container(path)

        def section(name):
            if name not in sections:
                raise checkpoint.CheckpointError(f"section {name!r}: missing")
            return sections[name]

        def blob(name):
            try:
                return nn.from_blob(section(name))
            except ValueError as exc:
                raise checkpoint.CheckpointError(f"section {name!r}: {exc}") from None

        def js(name):
            try:
                return json.loads(section(name))
            except ValueError as exc:
                raise checkpoint.CheckpointError(f"section {name!r}: {exc}") from None

        try:
            cfg = TrainerConfig.from_dict(js("config"))
        except (TypeError, ConfigError) as exc:
            raise checkpoint.CheckpointError(f"section 'config': {exc}") from None
        counters = js("counters")
        rng_states = js("rng")
        net_blobs = {name: blob(f"net:{name}") for name in
                     [f"sac.{k}" for k in ("actor", "q1", "q2", "q1_target", "q2_target")]
                     + ["psi", "sac.log_alpha", "model"]}
        opt_blobs = {name: blob(f"opt:{name}") for name in
                     ["sac.actor", "sac.q1", "sac.q2", "sac.alpha", "psi", "model"]}
        env_arrays = blob("buffer:env")
        model_arrays = blob("buffer:model")

        tr = cls(cfg, metrics_path=metrics_path, checkpoint_path=checkpoint_path)
        try:
            for name, net in tr._nets().items():
                net.set_params(net_blobs[name])
            tr.agent.log_alpha[...] = net_blobs["sac.log_alpha"][0]
            tr.model.restore(net_blobs["model"], counters["model_trained"])
            for name, opt in tr._optimizers().items():
                arrays = opt_blobs[name]
                for dst, src in zip(opt.m + opt.v, arrays, strict=True):
                    dst[...] = src
                for key, val in counters["optim"][name].items():
                    setattr(opt, key, val)
            tr.env_buf.restore(dict(zip(tr.env_buf.arrays(), env_arrays, strict=True)),
                               counters["env_buffer"])
            tr.model_buf.restore(dict(zip(tr.model_buf.arrays(), model_arrays, strict=True)),
                                 counters["model_buffer"])
            for name, st in rng_states.items():
                tr.rngs[name].bit_generator.state = st
        except (ValueError, KeyError) as exc:
            raise checkpoint.CheckpointError(f"state restore: {exc}") from None
        tr.t = counters["t"]
        tr.state = np.asarray(counters["state"])
        tr.episode_step = counters["episode_step"]
        tr.rollouts = counters["rollouts"]
        tr.policy_updates = counters["policy_updates"]
        tr.model_mse = counters["model_mse"]
        tr.acc = counters["acc"]
        tr.rows = [MetricsRow(**r) for r in counters["rows"]]
        tr._elapsed = counters["elapsed"]
        tr.model.train_calls = counters["model_train_calls"]
        tr.psi.updates = counters["psi_updates"]
        tr.psi.gradient_steps = counters["psi_steps"]
        tr.agent.updates = counters["sac_updates"]
        return tr


def run(cfg: TrainerConfig, metrics_path=None) -> list[MetricsRow]:
    return Trainer(cfg, metrics_path=metrics_path).run()

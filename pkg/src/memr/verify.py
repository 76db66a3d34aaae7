"""Brute-force oracle checks behind ``memr verify``.

Each check returns a ``Check`` with the observed value and its threshold so
callers (the CLI and the acceptance tests) can report and assert uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, spearmanr

from memr.buffers import SegmentedModelBuffer
from memr.dynamics import DynamicsConfig, EnsembleDynamics
from memr.gaussian import (PRIORITY_EPS, DiagGaussian, entropy_gain_approx,
                           entropy_gain_exact, priority, select_max_gain)
from memr.model_policy import ModelDataPolicy
from memr.sac import SacAgent, SacConfig
from memr.sumtree import SumTree


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    value: float = math.nan


# entropy gain ---------------------------------------------------------------

def lemma_gap(n: int, trials: int, rng) -> float:
    """Max |exact refit gain - large-N approximation| over random sets, |t - mu| <= 3 sigma."""
    worst = 0.0
    for _ in range(trials):
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 5), size=n)
        mu, sd = x.mean(), x.std()
        t = mu + rng.uniform(-3, 3) * sd
        worst = max(worst, abs(entropy_gain_exact(x, t) - entropy_gain_approx(n, mu, sd, t)))
    return worst


def check_lemma(ns=(100, 1000, 10000), trials=1000, seed=0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for n in ns:
        gap = lemma_gap(n, trials, rng)
        out.append(Check(f"lemma_bound[N={n}]", gap <= 1.0 / n,
                         f"max |exact-approx| = {gap:.3e} (bound {1.0 / n:.3e})", gap))
    return out


def joint_entropy(groups) -> float:
    """H(S) + E[H(A|S)] of discrete states with per-state MLE Gaussian actions."""
    total = sum(len(g) for g in groups)
    h = 0.0
    for g in groups:
        p = len(g) / total
        h += -p * math.log(p) + p * 0.5 * math.log(2 * math.pi * math.e * np.var(g))
    return h


def theorem_trial(rng, n_states=20, per_state=500):
    """One synthetic dataset: returns (selector agrees with oracle, Spearman rho).

    States share a count and a true action spread, the regime in which the
    state marginal is unchanged to first order by one extra sample.
    """
    means = rng.normal(0.0, 2.0, n_states)
    groups = [rng.normal(means[s], 1.0, per_state) for s in range(n_states)]
    actions = rng.normal(means, 1.5)
    base = joint_entropy(groups)
    gains = []
    for s in range(n_states):
        grown = list(groups)
        grown[s] = np.append(groups[s], actions[s])
        gains.append(joint_entropy(grown) - base)
    candidates = [(s, np.array([actions[s]]), DiagGaussian([groups[s].mean()], [groups[s].std()]))
                  for s in range(n_states)]
    chosen = select_max_gain(candidates)
    prios = [priority(c[2], c[1]) for c in candidates]
    return chosen == int(np.argmax(gains)), float(spearmanr(prios, gains)[0])


def check_theorem(trials=100, seed=0) -> list[Check]:
    rng = np.random.default_rng(seed)
    results = [theorem_trial(rng) for _ in range(trials)]
    agree = sum(r[0] for r in results)
    rho = float(np.mean([r[1] for r in results]))
    need = math.ceil(0.95 * trials)
    return [
        Check("theorem_top1", agree >= need, f"top-1 agreement {agree}/{trials} (need {need})",
              agree / trials),
        Check("theorem_spearman", rho >= 0.9, f"mean Spearman rho {rho:.4f} (need 0.9)", rho),
    ]


def priority_gap(samples: int, seed=0) -> float:
    """Max |closed-form priority - literal -log(sqrt(2 pi) pdf(a) sigma)|."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        d = int(rng.integers(1, 6))
        mean = rng.normal(0, 3, d)
        std = np.exp(rng.uniform(-3, 1.5, d))
        a = mean + std * rng.uniform(-5, 5, d)
        literal = float(np.sum(-(math.log(math.sqrt(2 * math.pi)) + norm.logpdf(a, mean, std)
                                 + np.log(std))))
        worst = max(worst, abs(priority(DiagGaussian(mean, std), a) - max(PRIORITY_EPS, literal)))
    return worst


def check_priority(samples=10_000, seed=0) -> list[Check]:
    gap = priority_gap(samples, seed)
    return [Check("priority_closed_form", gap <= 1e-9, f"max gap {gap:.3e} (tol 1e-9)", gap)]


# sum tree ---------------------------------------------------------------

def sampling_l1(size: int, draws: int, rng, alpha=1.0) -> float:
    """L1 gap between one stratified draw of ``draws`` leaves and p^alpha / sum."""
    from memr.buffers import EnvReplayBuffer
    buf = EnvReplayBuffer(size, 1, 1, alpha=alpha)
    prios = rng.uniform(0.01, 10.0, size)
    for i, p in enumerate(prios):
        buf.add([float(i)], [0.0], [0.0], 0.0, False, p)
    sample = buf.sample_states(draws, 0.0, rng)
    freq = np.bincount(sample.indices, minlength=size) / draws
    target = prios**alpha / np.sum(prios**alpha)
    return float(np.abs(freq - target).sum())


def descent_mismatches(trials: int, rng, kernel=None) -> int:
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 1025))
        tree = SumTree(n, kernel=kernel)
        vals = rng.uniform(0.0, 5.0, n) * (rng.random(n) > 0.1)
        if vals.sum() == 0:
            vals[0] = 1.0
        tree.set(np.arange(n), vals)
        cums = np.cumsum(vals)
        u = rng.uniform(0.0, cums[-1])
        linear = int(np.searchsorted(cums, u, side="right"))
        bad += int(tree.find([u])[0] != linear)
    return bad


def check_sumtree(draws=1_000_000, prefix_trials=10_000, seed=0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for size in (16, 1024):
        l1 = sampling_l1(size, draws, rng, alpha=0.6)
        out.append(Check(f"sampling_L1[n={size}]", l1 <= 0.01, f"L1 {l1:.4f} (tol 0.01)", l1))
    bad = descent_mismatches(prefix_trials, rng)
    out.append(Check("prefix_descent", bad == 0, f"{bad}/{prefix_trials} mismatches", bad))
    return out


def segment_mixes(batches: int, rng, segment_size=8, num_segments=16) -> int:
    """Push random batches (tagging states with their round) and count mixed policy batches."""
    buf = SegmentedModelBuffer(num_segments, segment_size, 1, 1)
    mixed = 0
    pushed = 0
    for _ in range(batches):
        if pushed == 0 or rng.random() < 0.3:
            tag = np.full((segment_size, 1), float(buf.next_round))
            buf.push_segment(tag, np.zeros((segment_size, 1)), tag, np.zeros(segment_size),
                             rng.uniform(0.1, 1.0, segment_size))
            pushed += 1
        b = int(rng.integers(1, segment_size + 1))
        batch = buf.sample_policy_batch(b, rng)
        mixed += int(np.any(batch.states[:, 0] != batch.round))
    return mixed


# gradients --------------------------------------------------------------

def finite_difference(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradient_errors(configs: int, seed=0) -> dict[str, float]:
    """Worst relative error of analytic vs central-difference gradients per head."""
    rng = np.random.default_rng(seed)
    worst = {"critic_loss": 0.0, "actor_surrogate": 0.0, "gaussian_nll": 0.0}
    for _ in range(configs):
        od, ad = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        hidden = (int(rng.integers(3, 7)), int(rng.integers(3, 7)))
        b = int(rng.integers(2, 6))
        agent = SacAgent(od, ad, float(rng.uniform(0.5, 3.0)),
                         SacConfig(hidden=hidden, init_temperature=float(rng.uniform(0.05, 1.0))),
                         rng=rng)
        obs = rng.normal(size=(b, od))
        act = rng.uniform(-agent.action_limit, agent.action_limit, (b, ad))
        y = rng.normal(size=b)
        w = rng.uniform(0.1, 1.0, b)
        _, grads = agent.critic_loss_and_grads(obs, act, y, w)[0]
        num = finite_difference(lambda: agent.critic_loss_and_grads(obs, act, y, w)[0][0],
                                agent.q1.params())
        worst["critic_loss"] = max(worst["critic_loss"], relative_error(grads, num))

        noise = rng.normal(size=(b, ad))
        _, grads = agent.actor_loss_and_grads(obs, noise)
        num = finite_difference(lambda: agent.actor_loss_and_grads(obs, noise)[0],
                                agent.actor.params())
        worst["actor_surrogate"] = max(worst["actor_surrogate"], relative_error(grads, num))

        psi = ModelDataPolicy(od, ad, hidden=hidden, rng=rng)
        _, grads = psi.loss_and_grads(obs, act)
        num = finite_difference(lambda: psi.loss_and_grads(obs, act)[0], psi.net.params())
        err = relative_error(grads, num)

        dyn = EnsembleDynamics(od, ad, DynamicsConfig(ensemble_size=2, hidden=hidden), rng=rng)
        for layer in dyn.net.layers:
            layer.weight += rng.normal(0, 0.3, layer.weight.shape)
        x = rng.normal(size=(2, b, od + ad))
        tgt = rng.normal(size=(2, b, od + 1))
        _, grads = dyn.loss_and_grads(x, tgt)
        num = finite_difference(lambda: dyn.loss_and_grads(x, tgt)[0], dyn.net.params())
        worst["gaussian_nll"] = max(worst["gaussian_nll"], err, relative_error(grads, num))
    return worst


def check_gradients(configs=100, seed=0) -> list[Check]:
    return [Check(f"gradcheck[{k}]", v <= 1e-4, f"max rel err {v:.2e} (tol 1e-4)", v)
            for k, v in gradient_errors(configs, seed).items()]


def run_all(lemma_ns=(100, 1000, 10000), theorem_trials=100, gradient_configs=100,
            seed=0) -> list[Check]:
    checks = []
    checks += check_lemma(lemma_ns, seed=seed)
    checks += check_theorem(theorem_trials, seed=seed)
    checks += check_priority(seed=seed)
    checks += check_sumtree(seed=seed)
    mixed = segment_mixes(100_000, np.random.default_rng(seed))
    checks.append(Check("segment_homogeneity", mixed == 0, f"{mixed} mixed batches", mixed))
    checks += check_gradients(gradient_configs, seed=seed)
    return checks

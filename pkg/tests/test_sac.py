import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from memr.nn import NumericalError
from memr.sac import SacAgent, SacConfig
from memr.verify import finite_difference, relative_error


def agent(rng, **kw):
    cfg = SacConfig(hidden=(16, 16), **kw)
    return SacAgent(3, 2, 2.0, cfg, rng=rng)


def batch(rng, b=8):
    return (rng.normal(size=(b, 3)), rng.uniform(-2, 2, (b, 2)), rng.normal(size=b),
            rng.normal(size=(b, 3)))


def test_actions_within_bounds(rng):
    ag = agent(rng)
    a = ag.act(rng.normal(0, 10, (100_000, 3)), rng=rng)
    assert np.all(np.abs(a) <= 2.0)


def test_deterministic_action(rng):
    ag = agent(rng)
    s = rng.normal(size=3)
    assert ag.act(s, deterministic=True).tobytes() == ag.act(s, deterministic=True).tobytes()
    last = ag.actor.layers[-1]
    last.weight[...] = 0
    last.bias[...] = 0
    np.testing.assert_array_equal(ag.act(s, deterministic=True), [0.0, 0.0])


def test_gamma_zero_target_is_reward(rng):
    ag = SacAgent(3, 2, 2.0, SacConfig(hidden=(8,), gamma=1e-300), rng=rng)
    ag.cfg.gamma = 0.0
    s, a, r, s2 = batch(rng)
    np.testing.assert_array_equal(ag.td_target(s2, r, rng.normal(size=(8, 2))), r)


def test_critic_weights(rng):
    ag = agent(rng)
    s, a, r, _ = batch(rng)
    ones = ag.critic_loss_and_grads(s, a, r, np.ones(8))
    plain = []
    for net in (ag.q1, ag.q2):
        q = net(np.concatenate([s, a], 1))[:, 0]
        plain.append(float(np.mean((q - r) ** 2)))
    assert [l for l, _ in ones] == pytest.approx(plain, rel=1e-12)
    half = ag.critic_loss_and_grads(s, a, r, np.full(8, 0.5))
    for (l1, g1), (l2, g2) in zip(ones, half):
        assert l2 == pytest.approx(0.5 * l1, rel=1e-12)
        n1 = math.sqrt(sum(np.sum(g**2) for g in g1))
        n2 = math.sqrt(sum(np.sum(g**2) for g in g2))
        assert n2 == pytest.approx(0.5 * n1, rel=1e-12)


def test_unit_weights_bitwise(rng):
    ag = agent(rng)
    s, a, r, _ = batch(rng)
    x = ag.critic_loss_and_grads(s, a, r, np.ones(8))
    y = ag.critic_loss_and_grads(s, a, r, np.ones(8))
    assert x[0][0] == y[0][0] and all(p.tobytes() == q.tobytes() for p, q in zip(x[0][1], y[0][1]))


def test_nonfinite_target(rng):
    ag = agent(rng)
    s, a, r, s2 = batch(rng)
    r[0] = np.inf
    with pytest.raises(NumericalError):
        ag.td_target(s2, r, rng.normal(size=(8, 2)))


def test_actor_gradient_matches_finite_differences(rng):
    ag = SacAgent(1, 1, 1.5, SacConfig(hidden=(6,)), rng=rng)
    obs = rng.normal(size=(5, 1))
    noise = rng.normal(size=(5, 1))
    _, grads = ag.actor_loss_and_grads(obs, noise)
    num = finite_difference(lambda: ag.actor_loss_and_grads(obs, noise)[0], ag.actor.params())
    assert relative_error(grads, num) <= 1e-3


def flat_critics(ag, value):
    for net in (ag.q1, ag.q2):
        for layer in net.layers:
            layer.weight[...] = 0
        net.layers[-1].bias[...] = value


def test_flat_q_zero_temperature_zero_gradient(rng):
    ag = agent(rng)
    flat_critics(ag, 3.0)
    ag.log_alpha[...] = -np.inf
    obs, noise = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, grads = ag.actor_loss_and_grads(obs, noise)
    assert all(not g.any() for g in grads)


def test_q_offset_leaves_actor_gradient(rng):
    ag = agent(rng)
    obs, noise = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    _, g0 = ag.actor_loss_and_grads(obs, noise)
    for net in (ag.q1, ag.q2):
        net.layers[-1].bias += 10.0
    _, g1 = ag.actor_loss_and_grads(obs, noise)
    for a, b in zip(g0, g1):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_temperature_direction(rng):
    ag = agent(rng)
    obs, noise = rng.normal(size=(64, 3)), rng.normal(size=(64, 2))
    _, logp = ag.sample(obs, noise)
    h = -float(np.mean(logp))
    ag.target_entropy = h - 1.0  # entropy above target
    assert ag.temperature_grad(obs, noise) > 0  # descent lowers log-alpha
    ag.target_entropy = h + 1.0
    assert ag.temperature_grad(obs, noise) < 0
    ag.target_entropy = h
    assert ag.temperature_grad(obs, noise) == pytest.approx(0.0, abs=1e-12)


def test_temperature_update_moves_the_right_way(rng):
    ag = agent(rng)
    obs = rng.normal(size=(256, 3))
    ag.target_entropy = 50.0  # far above any achievable entropy
    t0 = ag.temperature
    ag.temperature_update(obs, rng)
    assert ag.temperature > t0
    ag.target_entropy = -50.0
    t1 = ag.temperature
    ag.temperature_update(obs, rng)
    assert ag.temperature < t1


def test_target_sync(rng):
    ag = agent(rng)
    for layer in ag.q1.layers:
        layer.weight += 1.0
    ag.target_sync(1.0)
    for p, q in zip(ag.q1_target.params(), ag.q1.params()):
        np.testing.assert_array_equal(p, q)
    before = [p.copy() for p in ag.q1_target.params()]
    ag.target_sync(0.005)
    for p, q in zip(ag.q1_target.params(), before):
        np.testing.assert_array_equal(p, q)
    with pytest.raises(ValueError):
        ag.target_sync(0.0)


def test_target_sync_geometric(rng):
    ag = agent(rng)
    for layer in ag.q1.layers:
        layer.weight += 0.5
    gap0 = [o - t for o, t in zip(ag.q1.params(), ag.q1_target.params())]
    for _ in range(20):
        ag.target_sync(0.1)
    for g0, o, t in zip(gap0, ag.q1.params(), ag.q1_target.params()):
        np.testing.assert_allclose(o - t, 0.9**20 * g0, atol=1e-12)


def test_squashed_density_normalized(rng):
    ag = SacAgent(2, 1, 2.0, SacConfig(hidden=(8,)), rng=rng)
    obs = rng.normal(size=2)
    grid = np.linspace(-2, 2, 400_001)[1:-1]
    logp = ag.log_prob(np.repeat(obs[None], grid.size, 0), grid[:, None])
    mass = trapezoid(np.exp(logp), grid)
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_update_determinism():
    params = []
    for _ in range(2):
        r = np.random.default_rng(3)
        ag = agent(r)
        data = np.random.default_rng(4)
        for _ in range(1000):
            s, a, rew, s2 = batch(data, 4)
            ag.update(s, a, rew, s2, data.uniform(0.1, 1, 4), r)
        params.append(b"".join(p.tobytes() for n in ag.nets().values() for p in n.params()))
    assert params[0] == params[1]


def test_config_validation():
    with pytest.raises(ValueError):
        SacConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SacConfig(tau=0.0)

import math

import numpy as np
import pytest

from memr.nn import (AdamState, Dense, Net, NumericalError, Optimizer, adam_step, from_blob,
                     gaussian_nll, polyak, soft_clamp, soft_clamp_inverse, to_blob)
from memr.verify import finite_difference, relative_error


def single(weight, bias, act="identity"):
    net = Net((len(weight), len(weight[0])), out_activation=act)
    net.layers[0] = Dense(np.array(weight, float), np.array(bias, float), act)
    return net


def test_identity_layer_passes_input():
    net = single(np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(net([1.0, -2.0, 3.5]), [1.0, -2.0, 3.5])


def test_affine_example():
    assert single([[2.0]], [1.0])([3.0])[0] == 7.0


def test_relu_negative_preactivations():
    net = single(-np.eye(2), np.zeros(2), "relu")
    np.testing.assert_array_equal(net([1.0, 2.0]), [0.0, 0.0])


def test_forward_errors():
    net = Net((2, 3, 1))
    with pytest.raises(ValueError):
        net([1.0, 2.0, 3.0])
    bad = single([[1e308]], [0.0])
    with np.errstate(over="ignore"), pytest.raises(NumericalError):
        bad([1e10])
    ens = Net((2, 3, 1), ensemble=2)
    with pytest.raises(ValueError):
        ens([1.0, 2.0])


def test_forward_is_pure(rng):
    net = Net((4, 8, 8, 2), "tanh", rng=rng)
    x = rng.normal(size=(5, 4))
    a, b = net(x), net(x)
    assert a.tobytes() == b.tobytes()


def test_backward_product_rule():
    net = single([[2.0]], [0.0])
    _, tape = net.forward([3.0])
    grads, dx = net.backward(tape, [1.0])
    assert grads[0][0, 0] == 3.0 and grads[1][0] == 1.0
    assert dx[0] == 2.0


def test_zero_output_grad(rng):
    net = Net((3, 5, 2), rng=rng)
    _, tape = net.forward(rng.normal(size=(4, 3)))
    grads, dx = net.backward(tape, np.zeros((4, 2)))
    assert all(not g.any() for g in grads) and not dx.any()


def test_tape_reuse_rejected(rng):
    net = Net((3, 2), rng=rng)
    _, tape = net.forward(rng.normal(size=(1, 3)))
    net.backward(tape, np.ones((1, 2)))
    with pytest.raises(RuntimeError):
        net.backward(tape, np.ones((1, 2)))


@pytest.mark.parametrize("act", ["relu", "tanh", "identity"])
@pytest.mark.parametrize("ensemble", [None, 3])
def test_gradients_match_finite_differences(act, ensemble, rng):
    for _ in range(5):
        net = Net((3, 6, 4, 2), act, rng=rng, ensemble=ensemble)
        shape = (4, 3) if ensemble is None else (ensemble, 4, 3)
        x = rng.normal(size=shape)
        w = rng.normal(size=shape[:-1] + (2,))

        def f():
            return float(np.sum(net(x) * w))

        _, tape = net.forward(x)
        grads, dx = net.backward(tape, w)
        assert [g.shape for g in grads] == [p.shape for p in net.params()]
        assert relative_error(grads, finite_difference(f, net.params())) <= 1e-4
        xs = [x]
        assert relative_error([dx], finite_difference(lambda: float(np.sum(net(xs[0]) * w)), xs)) <= 1e-4


def test_soft_clamp_bounds_and_inverse():
    x = np.linspace(-50, 50, 1001)
    y, slope = soft_clamp(x, -10.0, 2.0)
    assert np.all(y >= -10) and np.all(y <= 2) and np.all(slope >= 0)
    mid = np.linspace(-9, 1.5, 20)
    np.testing.assert_allclose(soft_clamp(soft_clamp_inverse(mid, -10, 2), -10, 2)[0], mid,
                               atol=1e-9)
    h = 1e-6
    num = (soft_clamp(x + h, -10, 2)[0] - soft_clamp(x - h, -10, 2)[0]) / (2 * h)
    np.testing.assert_allclose(slope, num, atol=1e-6)


def test_gaussian_nll_examples():
    loss, dm, _ = gaussian_nll(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)))
    assert loss == pytest.approx(1.5 * math.log(2 * math.pi))
    assert not dm.any()
    loss, _, _ = gaussian_nll(np.zeros((1, 1)), np.zeros((1, 1)), np.full((1, 1), 2.0))
    assert loss == pytest.approx(2 + 0.5 * math.log(2 * math.pi))


def test_gaussian_nll_gradients(rng):
    mean, lv, tgt = rng.normal(size=(3, 5, 2))
    _, dm, dlv = gaussian_nll(mean, lv, tgt)
    num = finite_difference(lambda: gaussian_nll(mean, lv, tgt)[0], [mean, lv])
    assert relative_error([dm, dlv], num) <= 1e-6


def test_gaussian_nll_rejects_nonfinite():
    with pytest.raises(NumericalError):
        gaussian_nll(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros((1, 1)))


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    adam_step(AdamState.for_params(p), p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0, 0.5])]
    adam_step(AdamState.for_params(p, lr=0.01), p, [np.array([3.0, -0.2, 1e-3])])
    np.testing.assert_allclose(p[0] - np.array([1.0, -2.0, 0.5]), [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_deterministic(rng):
    g = [rng.normal(size=(3, 2))]
    runs = []
    for _ in range(2):
        p = [np.ones((3, 2))]
        st = AdamState.for_params(p)
        for _ in range(3):
            adam_step(st, p, g)
        runs.append(p[0].tobytes())
    assert runs[0] == runs[1]


def test_optimizer_reduces_loss(rng):
    net = Net((2, 16, 1), "tanh", rng=rng)
    opt = Optimizer(net, lr=1e-2)
    x = rng.normal(size=(64, 2))
    y = (x[:, :1] - 2 * x[:, 1:])
    losses = []
    for _ in range(200):
        out, tape = net.forward(x)
        losses.append(float(np.mean((out - y) ** 2)))
        grads, _ = net.backward(tape, 2 * (out - y) / len(x))
        opt.step(grads)
    assert losses[-1] < 0.1 * losses[0]


def test_polyak(rng):
    a, b = Net((2, 3, 1), rng=rng), Net((2, 3, 1), rng=rng)
    before = [p.copy() for p in a.params()]
    polyak(a, b, 0.25)
    for pa, p0, pb in zip(a.params(), before, b.params()):
        np.testing.assert_allclose(pa, 0.75 * p0 + 0.25 * pb)


def test_blob_roundtrip(rng):
    arrays = [rng.normal(size=(2, 3)), np.arange(4.0), np.array(3.5), np.zeros((0, 2))]
    out = from_blob(to_blob(arrays))
    assert len(out) == len(arrays)
    for x, y in zip(arrays, out):
        assert x.shape == y.shape and x.tobytes() == y.tobytes()
    with pytest.raises(ValueError):
        from_blob(to_blob(arrays)[:-3])

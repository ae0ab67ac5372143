"""Adam against a step-by-step reference implementation."""

import numpy as np
import pytest

import sleepkd.autodiff as ad
from sleepkd.optim import Adam

RNG = np.random.default_rng(5)


def reference_adam(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (np.sqrt(vh) + eps)
    return x


def test_matches_reference_trajectory():
    x0 = RNG.standard_normal((3, 4))
    grads = [RNG.standard_normal((3, 4)) for _ in range(10)]
    p = ad.param(x0.copy())
    opt = Adam([p], lr=0.01)
    for g in grads:
        opt.zero_grad()
        p.ensure_grad()
        p.grad[...] = g
        opt.step()
    np.testing.assert_allclose(p.data, reference_adam(x0, grads, 0.01), atol=1e-14)


def test_skips_params_without_grad():
    p = ad.param(np.ones(3))
    q = ad.param(np.ones(3))
    opt = Adam([p, q], lr=0.1)
    p.ensure_grad()
    p.grad[...] = 1.0
    opt.step()
    assert not np.array_equal(p.data, np.ones(3))
    np.testing.assert_array_equal(q.data, np.ones(3))


def test_skips_frozen_params():
    p = ad.param(np.ones(3))
    p.ensure_grad()
    p.grad[...] = 1.0
    p.requires_grad = False
    Adam([p], lr=0.1).step()
    np.testing.assert_array_equal(p.data, np.ones(3))


def test_zero_grad_clears():
    p = ad.param(np.ones(3))
    opt = Adam([p], lr=0.1)
    p.ensure_grad()
    p.grad[...] = 5.0
    opt.zero_grad()
    assert p.grad is None


def test_minimizes_quadratic():
    p = ad.param(np.array([4.0, -3.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        with ad.Tape() as tape:
            tape.backward(ad.sum_all(ad.mul(p, p)))
        opt.step()
    assert np.all(np.abs(p.data) < 1e-3)


def test_rejects_bad_hyperparams():
    from sleepkd.errors import ConfigError

    with pytest.raises(ConfigError):
        Adam([ad.param(np.ones(1))], lr=-1.0)
    with pytest.raises(ConfigError):
        Adam([ad.param(np.ones(1))], beta1=1.0)

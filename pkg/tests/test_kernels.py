"""Backend agreement between the numba kernels and the numpy fallback."""

import numpy as np
import pytest

from sleepkd import kernels

RNG = np.random.default_rng(11)
HAVE_NUMBA = "numba" in kernels.available_backends()

pytestmark = pytest.mark.skipif(
    not HAVE_NUMBA, reason="numba backend not available"
)


def run_both(fn, *args):
    keep = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        a = fn(*args)
        kernels.set_backend("numba")
        b = fn(*args)
    finally:
        kernels.set_backend(keep)
    return a, b


@pytest.mark.parametrize("k", [3, 5, 7])
@pytest.mark.parametrize("shape", [(1, 1, 16), (2, 3, 33), (4, 8, 100)])
def test_conv1d_valid_agreement(k, shape):
    b, ci, lp = shape
    if lp < k:
        pytest.skip("length below kernel size")
    co = ci + 1
    xp = RNG.standard_normal((b, ci, lp))
    w = RNG.standard_normal((co, ci, k))
    bias = RNG.standard_normal(co)
    ynp, ynb = run_both(kernels.conv1d_valid, xp, w, bias)
    np.testing.assert_allclose(ynb, ynp, rtol=0, atol=1e-12)


@pytest.mark.parametrize("k", [3, 5, 7])
@pytest.mark.parametrize("lp", [8, 31, 200])
def test_conv1d_grad_input_agreement(k, lp):
    b, ci, co = 2, 3, 4
    l = lp - k + 1
    dy = RNG.standard_normal((b, co, l))
    w = RNG.standard_normal((co, ci, k))
    a, nb = run_both(kernels.conv1d_grad_input, dy, w, lp)
    np.testing.assert_allclose(nb, a, rtol=0, atol=1e-12)


@pytest.mark.parametrize("k", [3, 5, 7])
@pytest.mark.parametrize("lp", [9, 40, 128])
def test_conv1d_grad_weights_agreement(k, lp):
    b, ci, co = 2, 3, 4
    l = lp - k + 1
    xp = RNG.standard_normal((b, ci, lp))
    dy = RNG.standard_normal((b, co, l))
    (dwa, dba), (dwb, dbb) = run_both(kernels.conv1d_grad_weights, xp, dy, k)
    np.testing.assert_allclose(dwb, dwa, rtol=0, atol=1e-12)
    np.testing.assert_allclose(dbb, dba, rtol=0, atol=1e-12)


def test_conv1d_matches_direct_loop():
    b, ci, co, k, lp = 1, 2, 3, 5, 12
    xp = RNG.standard_normal((b, ci, lp))
    w = RNG.standard_normal((co, ci, k))
    bias = RNG.standard_normal(co)
    y = kernels.conv1d_valid(xp, w, bias)
    l = lp - k + 1
    ref = np.zeros((b, co, l))
    for o in range(co):
        ref[0, o, :] = bias[o]
        for i in range(ci):
            for t in range(k):
                ref[0, o, :] += w[o, i, t] * xp[0, i, t:t + l]
    np.testing.assert_allclose(y, ref, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1, 8), (3, 5, 64)])
def test_maxpool_agreement(shape):
    x = RNG.standard_normal(shape)
    (ya, aa), (yb, ab) = run_both(kernels.maxpool2_forward, x)
    np.testing.assert_array_equal(yb, ya)
    np.testing.assert_array_equal(ab, aa)
    dy = RNG.standard_normal(ya.shape)
    ga, gb = run_both(kernels.maxpool2_backward, dy, aa)
    np.testing.assert_array_equal(gb, ga)


def test_maxpool_tie_prefers_first():
    x = np.array([[[2.0, 2.0, 1.0, 3.0]]])
    keep = kernels.get_backend()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            y, arg = kernels.maxpool2_forward(x)
            assert np.array_equal(y, [[[2.0, 3.0]]]), name
            # arg holds the within-pair offset; ties keep the earlier slot
            assert np.array_equal(arg, [[[0, 1]]]), name
    finally:
        kernels.set_backend(keep)


def test_set_backend_rejects_unknown():
    from sleepkd.errors import ConfigError

    with pytest.raises(ConfigError):
        kernels.set_backend("tpu")


def test_get_backend_reports_current():
    keep = kernels.get_backend()
    try:
        kernels.set_backend("numpy")
        assert kernels.get_backend() == "numpy"
    finally:
        kernels.set_backend(keep)

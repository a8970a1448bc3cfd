"""Cross-backend agreement between the compiled and numpy kernels."""

import numpy as np
import pytest

from amcguard.kernels import numpy_backend

try:
    from amcguard.kernels import _fast
except ImportError:
    _fast = None

needs_ext = pytest.mark.skipif(_fast is None, reason="compiled kernels not built")


def _rand_conv_case(rng, dtype):
    x = rng.normal(size=(3, 20, 2)).astype(dtype)
    k = rng.normal(size=(6, 8, 2)).astype(dtype)
    b = rng.normal(size=6).astype(dtype)
    return x, k, b


def _rand_lstm_case(rng, dtype):
    x = rng.normal(size=(4, 11, 5)).astype(dtype)
    wx = (rng.normal(size=(5, 12)) * 0.4).astype(dtype)
    wh = (rng.normal(size=(3, 12)) * 0.4).astype(dtype)
    b = (rng.normal(size=12) * 0.1).astype(dtype)
    return x, wx, wh, b


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv1d_forward_agrees(dtype, rng):
    x, k, b = _rand_conv_case(rng, dtype)
    ya = numpy_backend.conv1d_forward(x, k, b)
    yb = _fast.conv1d_forward(x, k, b)
    assert np.allclose(ya, yb, rtol=1e-6, atol=1e-6)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv1d_backward_agrees(dtype, rng):
    x, k, b = _rand_conv_case(rng, dtype)
    gy = rng.normal(size=(3, 20, 6)).astype(dtype)
    for need_gx, need_gk in [(True, True), (True, False), (False, True)]:
        ga = numpy_backend.conv1d_backward(x, k, gy, need_gx, need_gk)
        gb_ = _fast.conv1d_backward(x, k, gy, need_gx, need_gk)
        for a, b_ in zip(ga, gb_):
            if a is None or b_ is None:
                assert a is None and b_ is None
            else:
                assert np.allclose(a, b_, rtol=1e-5, atol=1e-6)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lstm_forward_agrees(dtype, rng):
    x, wx, wh, b = _rand_lstm_case(rng, dtype)
    ha, ga, ca = numpy_backend.lstm_forward(x, wx, wh, b)
    hb, gb_, cb = _fast.lstm_forward(x, wx, wh, b)
    assert np.allclose(ha, hb, rtol=1e-5, atol=1e-6)
    assert np.allclose(ga, gb_, rtol=1e-5, atol=1e-6)
    assert np.allclose(ca, cb, rtol=1e-5, atol=1e-6)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lstm_backward_agrees(dtype, rng):
    x, wx, wh, b = _rand_lstm_case(rng, dtype)
    h, gates, c = numpy_backend.lstm_forward(x, wx, wh, b)
    gh = rng.normal(size=h.shape).astype(dtype)
    for need_gx, need_gw in [(True, True), (True, False), (False, True)]:
        ga = numpy_backend.lstm_backward(x, wx, wh, h, gates, c, gh, need_gx, need_gw)
        gb_ = _fast.lstm_backward(x, wx, wh, h, gates, c, gh, need_gx, need_gw)
        for a, b_ in zip(ga, gb_):
            if a is None or b_ is None:
                assert a is None and b_ is None
            else:
                assert np.allclose(a, b_, rtol=1e-4, atol=1e-5)

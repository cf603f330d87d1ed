import numpy as np
import pytest

from trisr import kernels

RNG = np.random.default_rng(5150)

try:
    NUMBA = kernels.load_backend("numba")
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

NUMPY = kernels.load_backend("numpy")

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


@needs_numba
@pytest.mark.parametrize("pad_mode", ["zeros", "wrap"])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv2d_backends_agree(pad_mode, dtype):
    x = RNG.standard_normal((2, 9, 7, 5)).astype(dtype)
    w = RNG.standard_normal((3, 3, 5, 6)).astype(dtype)
    b = RNG.standard_normal(6).astype(dtype)
    gy = RNG.standard_normal((2, 9, 7, 6)).astype(dtype)
    tol = 1e-4 if dtype == np.float32 else 1e-11
    y1 = NUMBA.conv2d_forward(x, w, b, pad_mode)
    y2 = NUMPY.conv2d_forward(x, w, b, pad_mode)
    assert np.allclose(y1, y2, atol=tol)
    for g1, g2 in zip(NUMBA.conv2d_backward(x, w, gy, pad_mode),
                      NUMPY.conv2d_backward(x, w, gy, pad_mode)):
        assert np.allclose(g1, g2, atol=tol)


@needs_numba
@pytest.mark.parametrize("pad_mode", ["zeros", "wrap"])
def test_dwconv_backends_agree(pad_mode):
    x = RNG.standard_normal((2, 8, 10, 4))
    w = RNG.standard_normal((3, 3, 4))
    b = RNG.standard_normal(4)
    gy = RNG.standard_normal(x.shape)
    assert np.allclose(NUMBA.dwconv_forward(x, w, b, pad_mode),
                       NUMPY.dwconv_forward(x, w, b, pad_mode), atol=1e-11)
    for g1, g2 in zip(NUMBA.dwconv_backward(x, w, gy, pad_mode),
                      NUMPY.dwconv_backward(x, w, gy, pad_mode)):
        assert np.allclose(g1, g2, atol=1e-11)


@needs_numba
def test_scatter_add_backends_agree():
    idx = RNG.integers(0, 50, size=200)
    src = RNG.standard_normal((200, 7))
    d1 = NUMBA.scatter_add_rows(np.zeros((50, 7)), idx, src)
    d2 = NUMPY.scatter_add_rows(np.zeros((50, 7)), idx, src)
    assert np.allclose(d1, d2, atol=1e-12)


def test_conv2d_against_direct_loops():
    # independent reference: literal five-deep loops
    x = RNG.standard_normal((1, 5, 6, 2))
    w = RNG.standard_normal((3, 3, 2, 3))
    b = RNG.standard_normal(3)
    got = NUMPY.conv2d_forward(x, w, b, "zeros")
    want = np.zeros((1, 5, 6, 3))
    for i in range(5):
        for j in range(6):
            for di in range(3):
                for dj in range(3):
                    ii, jj = i + di - 1, j + dj - 1
                    if 0 <= ii < 5 and 0 <= jj < 6:
                        want[0, i, j] += x[0, ii, jj] @ w[di, dj]
    want += b
    assert np.allclose(got, want, atol=1e-12)


def test_wrap_padding_fold_is_adjoint():
    # <pad(x), y> == <x, fold(y)> for random x, y
    from trisr.kernels._common import fold_padding, pad_spatial

    for mode in ("zeros", "wrap"):
        x = RNG.standard_normal((2, 5, 6, 3))
        y = RNG.standard_normal((2, 9, 10, 3))
        lhs = float((pad_spatial(x, 2, mode) * y).sum())
        rhs = float((x * fold_padding(y, 2, mode)).sum())
        assert abs(lhs - rhs) < 1e-9


def test_conv_gradients_match_finite_differences():
    x = RNG.standard_normal((1, 4, 4, 2))
    w = RNG.standard_normal((3, 3, 2, 2))
    b = RNG.standard_normal(2)
    for mode in ("zeros", "wrap"):
        gy = RNG.standard_normal((1, 4, 4, 2))
        gx, gw, gb = NUMPY.conv2d_backward(x, w, gy, mode)
        eps = 1e-6

        def loss(xx, ww, bb):
            return float((NUMPY.conv2d_forward(xx, ww, bb, mode) * gy).sum())

        for arr, grad in ((x, gx), (w, gw), (b, gb)):
            flat = arr.reshape(-1)
            for k in RNG.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[k]
                flat[k] = orig + eps
                up = loss(x, w, b)
                flat[k] = orig - eps
                dn = loss(x, w, b)
                flat[k] = orig
                num = (up - dn) / (2 * eps)
                assert abs(num - grad.reshape(-1)[k]) < 1e-4


def test_backend_selection_api():
    assert kernels.BACKEND in ("numpy", "numba")
    with pytest.raises(ValueError):
        kernels.load_backend("cuda")

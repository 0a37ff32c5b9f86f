"""Backend selection and cross-backend numeric parity."""

import subprocess
import sys

import numpy as np
import pytest

from styleinv import backend

HAVE_CYTHON = backend.cython_impl is not None

CONV_CASES = [
    ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
    ((2, 4, 9, 7), (5, 4, 3, 3), 2, 1),
    ((3, 6, 5, 5), (2, 6, 1, 1), 1, 0),
    ((1, 64, 4, 4), (64, 64, 3, 3), 1, 1),
]


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernels unavailable")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("xs,ws,stride,pad", CONV_CASES)
def test_backends_agree(xs, ws, stride, pad, dtype):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(xs).astype(dtype)
    w = rng.standard_normal(ws).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12

    yc = backend.cython_impl.conv2d_forward(x, w, stride, pad)
    yn = backend.numpy_impl.conv2d_forward(x, w, stride, pad)
    np.testing.assert_allclose(yc, yn, rtol=tol, atol=tol)

    g = np.ascontiguousarray(rng.standard_normal(yc.shape).astype(dtype))
    np.testing.assert_allclose(
        backend.cython_impl.conv2d_backward_input(g, w, stride, pad, xs[2], xs[3]),
        backend.numpy_impl.conv2d_backward_input(g, w, stride, pad, xs[2], xs[3]),
        rtol=tol, atol=tol)
    np.testing.assert_allclose(
        backend.cython_impl.conv2d_backward_weight(g, x, stride, pad, ws[2], ws[3]),
        backend.numpy_impl.conv2d_backward_weight(g, x, stride, pad, ws[2], ws[3]),
        rtol=tol, atol=tol)


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernels unavailable")
def test_read_only_inputs_are_accepted():
    # frozen network weights arrive with the writeable flag cleared
    x = np.ones((1, 2, 4, 4), dtype=np.float32)
    w = np.ones((3, 2, 3, 3), dtype=np.float32)
    x.setflags(write=False)
    w.setflags(write=False)
    y = backend.cython_impl.conv2d_forward(x, w, 1, 1)
    assert y.shape == (1, 3, 4, 4)


def _run(env_value):
    code = "import styleinv.backend as b; print(b.name)"
    return subprocess.run([sys.executable, "-c", code],
                          env={"PATH": "/usr/bin:/bin", "STYLEINV_BACKEND": env_value},
                          capture_output=True, text=True)


def test_env_forces_numpy_backend():
    proc = _run("numpy")
    assert proc.returncode == 0 and proc.stdout.strip() == "numpy"


def test_env_rejects_unknown_backend():
    proc = _run("fortran")
    assert proc.returncode != 0


def test_active_backend_is_exposed():
    assert backend.name in ("cython", "numpy")
    assert callable(backend.conv2d_forward)

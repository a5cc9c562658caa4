"""The compiled and numpy kernels agree; fallback selection works."""
import os
import subprocess
import sys

import numpy as np
import pytest

from dpdtune import _backend, _pykernels

pytestmark = pytest.mark.skipif("cython" not in _backend.available(), reason="extension not built")


@pytest.fixture
def problem(rng):
    n, N = 57, 41
    x = rng.normal(size=(n, 2))
    X = np.ascontiguousarray(np.column_stack([np.ones(n), x]))
    y = X @ [0.5, 1.0, -2.0] + rng.standard_t(3, n)
    theta = np.column_stack([rng.normal([0.5, 1.0, -2.0], 0.3, (N, 3)), rng.uniform(0.5, 2.0, N)])
    return np.ascontiguousarray(theta), y, X


def ck():
    return _backend._AVAILABLE["cython"]


@pytest.mark.parametrize("gamma", [0.0, 1e-4, 0.2, 1.7])
def test_log_target(problem, gamma):
    theta, y, X = problem
    np.testing.assert_allclose(ck().log_target(theta, y, X, gamma),
                               _pykernels.log_target(theta, y, X, gamma), rtol=1e-12)


@pytest.mark.parametrize("threads", [1, 3])
def test_log_target_threads(problem, threads):
    theta, y, X = problem
    a = ck().log_target(theta, y, X, 0.3, threads)
    b = ck().log_target(theta, y, X, 0.3, 1)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("gamma", [0.05, 0.6])
def test_hscore_stats(problem, rng, gamma):
    theta, y, X = problem
    w = rng.dirichlet(np.ones(theta.shape[0]))
    for a, b in zip(ck().hscore_stats(theta, w, y, X, gamma), _pykernels.hscore_stats(theta, w, y, X, gamma)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def _mh_inputs(problem, rng, M=25):
    theta, y, X = problem
    steps = rng.normal(0, 0.05, (M,) + theta.shape)
    logu = np.log(rng.random((M, theta.shape[0])))
    lower = np.array([-np.inf] * 3 + [0.0])
    upper = np.full(4, np.inf)
    return steps, logu, lower, upper


def test_mh_chain(problem, rng):
    theta, y, X = problem
    steps, logu, lower, upper = _mh_inputs(problem, rng)
    out = []
    for k in (ck(), _pykernels):
        th = theta.copy()
        lp = 0.8 * _pykernels.log_target(th, y, X, 0.3)
        acc = k.mh_chain(th, lp, steps, logu, y, X, 0.3, 0.8, lower, upper)
        out.append((th, lp, np.asarray(acc)))
    np.testing.assert_allclose(out[0][0], out[1][0], rtol=1e-13)
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-10)
    assert np.array_equal(out[0][2], out[1][2])
    assert 0 < out[0][2].sum() < steps.shape[0] * theta.shape[0]


def test_mh_chain_respects_box(problem, rng):
    theta, y, X = problem
    steps, logu, lower, upper = _mh_inputs(problem, rng)
    upper[0] = theta[:, 0].max() + 1e-9  # any upward step in coordinate 0 leaves the box
    th = theta.copy()
    lp = _pykernels.log_target(th, y, X, 0.3)
    ck().mh_chain(th, lp, steps, logu, y, X, 0.3, 1.0, lower, upper)
    assert np.all(th[:, 0] < upper[0])


def test_mh_trace(problem, rng):
    theta, y, X = problem
    steps, logu, lower, upper = _mh_inputs(problem, rng, M=300)
    steps, logu = np.ascontiguousarray(steps[:, :1]), np.ascontiguousarray(logu[:, :1])
    out = []
    for k in (ck(), _pykernels):
        th = theta[:1].copy()
        lp = _pykernels.log_target(th, y, X, 0.4)
        chain = np.empty((300, 4))
        acc = k.mh_trace(th, lp, steps, logu, y, X, 0.4, lower, upper, chain)
        out.append((chain, int(acc)))
    np.testing.assert_allclose(out[0][0], out[1][0], rtol=1e-13)
    assert out[0][1] == out[1][1]


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _backend.set_backend("fortran")


@pytest.mark.parametrize("value,expected", [("python", "python"), ("cython", "cython"), ("bogus", "cython")])
def test_environment_selection(value, expected):
    code = "from dpdtune import _backend; print(_backend.backend_name())"
    env = {**os.environ, "DPDTUNE_BACKEND": value}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_fallback_when_extension_missing():
    # a meta-path hook that hides the compiled module simulates a build without it
    code = (
        "import sys\n"
        "class Hide:\n"
        "    def find_spec(self, name, path=None, target=None):\n"
        "        if name == 'dpdtune._ckernels': raise ImportError('hidden')\n"
        "sys.meta_path.insert(0, Hide())\n"
        "from dpdtune import _backend; print(_backend.backend_name(), _backend.available())\n"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python ['python']"

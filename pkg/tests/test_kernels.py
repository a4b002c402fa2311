import os
import subprocess
import sys

import numpy as np
import pytest

from fockga import kernels


def _compiled():
    try:
        return kernels.get_backend("compiled")
    except RuntimeError:
        pytest.skip("compiled kernels not built")


def test_backends_agree_on_posterior_variances(rng):
    cc = _compiled()
    py = kernels.get_backend("python")
    k, g = 30, 21
    p = rng.dirichlet(np.ones(k), size=g)
    logp_t = np.ascontiguousarray(np.log(p.T))
    idx = rng.integers(0, k, size=(500, 5)).astype(np.int64)
    logw = np.log(np.full(g, 1 / g))
    theta = np.linspace(-0.1, 0.1, g)
    a = py.posterior_variances(logp_t, idx, logw, theta)
    b = cc.posterior_variances(logp_t, idx, logw, theta)
    assert np.max(np.abs(a - b)) < 1e-15


def test_posterior_variance_single_outcome_matches_direct(rng):
    py = kernels.get_backend("python")
    g = 11
    lik = rng.random(g)
    theta = np.linspace(-1, 1, g)
    w = rng.random(g)
    w /= w.sum()
    post = w * lik / np.sum(w * lik)
    want = post @ theta ** 2 - (post @ theta) ** 2
    got = py.posterior_variances(np.log(lik)[None, :].copy(), np.zeros((1, 1), np.int64), np.log(w), theta)
    assert np.isclose(got[0], want, rtol=1e-13)


def test_pure_python_switch():
    code = "from fockga import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, FOCKGA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")

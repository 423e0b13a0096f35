import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from regilqr import kernels

from conftest import random_linquad

BACKENDS = kernels.available_backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@pytest.mark.parametrize("shape", [(1, 1, 1), (5, 3, 2), (12, 4, 4), (30, 2, 1)])
@pytest.mark.parametrize("nu", [0.0, 1e-3, 10.0])
def test_backends_agree(shape, nu):
    rng = np.random.default_rng(sum(shape))
    m = random_linquad(rng, *shape)
    if nu == 0.0:
        m.P[:] += np.eye(shape[1])
    outs = {}
    for name, (bw, ro) in BACKENDS.items():
        K, k, J, j, const, fail = bw(m.A, m.B, m.P, m.p, nu)
        v, y = ro(np.asarray(K), np.asarray(k), m.A, m.B)
        outs[name] = [np.asarray(a) for a in (K, k, J, j, const, v, y)] + [fail]
    py, cy = outs["python"], outs["cython"]
    assert py[-1] == cy[-1]
    for a, b in zip(py[:-1], cy[:-1]):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_backend_reports_failure_stage(name):
    bw, _ = BACKENDS[name]
    one = np.ones((3, 1, 1))
    P = one.copy()
    P[1] = -5.0
    *_, fail = bw(one, one, P, np.ones((3, 1)), 1.0)
    # stage t = 1 sees J_2 = P[1] through B^T J B = -5
    assert fail == 1


def test_pure_python_env_selects_fallback():
    env = dict(os.environ, REGILQR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import regilqr; print(regilqr.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_reload_keeps_backend():
    before = kernels.BACKEND
    assert importlib.reload(kernels).BACKEND == before

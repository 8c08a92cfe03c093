import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import fig2_instance
from ra_numopt import kernels
from ra_numopt.crosslayer import SolverConfig, distributed_solve
from ra_numopt.mac import TradeoffWeights
from ra_numopt.network import GenConfig, generate_topology


def naive_reception(P, ptr, idx):
    return np.array([np.prod(1.0 - P[idx[ptr[k]:ptr[k + 1]]]) for k in range(len(ptr) - 1)])


def naive_weights(w, P, ptr, idx, n):
    out = np.zeros(n)
    for k in range(len(ptr) - 1):
        aff = idx[ptr[k]:ptr[k + 1]]
        for l in aff:
            out[l] += w[k] * np.prod(1.0 - P[aff[aff != l]])
    return out


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_against_naive(backend):
    t = generate_topology(GenConfig(40, seed=1))
    ptr, idx = t.affect_csr
    rng = np.random.default_rng(0)
    for _ in range(5):
        P = rng.uniform(0, 1, t.n)
        # a saturated node makes the leave-one-out products need care
        P[rng.integers(t.n)] = 1.0
        w = rng.uniform(0, 2, t.m)
        assert np.allclose(backend.reception(P, ptr, idx), naive_reception(P, ptr, idx), rtol=1e-13, atol=1e-15)
        assert np.allclose(backend.interference_weights(w, P, ptr, idx, t.n), naive_weights(w, P, ptr, idx, t.n),
                           rtol=1e-12, atol=1e-15)


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled extension not built")
def test_backends_agree_on_solver_trace():
    t, s = fig2_instance()
    cfg = SolverConfig(max_iters=100, dual_every=0)
    runs = {}
    previous = kernels.BACKEND
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            runs[name] = np.array(distributed_solve(t, s, TradeoffWeights(5, 1), cfg).trace.p)
    finally:
        kernels.set_backend(previous)
    a, b = runs.values()
    assert np.max(np.abs(a - b)) <= 1e-12


def test_pure_python_switch():
    env = dict(os.environ, RA_NUMOPT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import ra_numopt; print(ra_numopt.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

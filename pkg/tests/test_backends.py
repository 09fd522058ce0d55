import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvdc_lnmpc._backend import BACKEND, get_kernels
from mvdc_lnmpc.errors import VoltageFloorViolation
from mvdc_lnmpc.model import default_params, restoration_equilibrium

try:
    compiled = get_kernels("cython")
except ImportError:  # extension not built
    compiled = None
python = get_kernels("python")

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def _setup():
    params, topo = default_params()
    x0, u0 = restoration_equilibrium(params, topo, [10e6, 0.0])
    return params, topo, params.kernel_vector(), x0, u0


def test_backend_flag():
    assert BACKEND in ("cython", "python")


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(dv=st.floats(-500, 500), di=st.floats(-200, 200), du=st.floats(-300, 300),
       ppl=st.floats(0, 5e6))
def test_backends_agree_on_step(dv, di, du, ppl):
    params, topo, pvec, x0, u0 = _setup()
    x = x0.copy()
    x[0] += dv
    x[topo.currents] += di
    d = np.array([10e6, ppl])
    args = (pvec, topo.n_gen, topo.n_sc)
    a = compiled.derivatives(*args, x, u0 + du, d)
    b = python.derivatives(*args, x, u0 + du, d)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)
    a = compiled.rk4_step(*args, x, u0 + du, d, 5e-3, 10)
    b = python.rk4_step(*args, x, u0 + du, d, 5e-3, 10)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)


@needs_compiled
def test_backends_agree_on_rollouts():
    params, topo, pvec, x0, u0 = _setup()
    rng = np.random.default_rng(0)
    u = u0 + rng.uniform(-50, 50, (6, 10))
    d = np.tile([10e6, 3e6], (10, 1))
    args = (pvec, topo.n_gen, topo.n_sc, x0)
    ta, oka = compiled.rollout(*args, u[0], d, 5e-3, 10)
    tb, okb = python.rollout(*args, u[0], d, 5e-3, 10)
    assert oka and okb and np.allclose(ta, tb, rtol=1e-12, atol=1e-9)
    ba, oka = compiled.rollout_batch(*args, u, d, 5e-3, 10)
    bb, okb = python.rollout_batch(*args, u, d, 5e-3, 10)
    assert np.all(oka) and np.all(okb) and np.allclose(ba, bb, rtol=1e-12, atol=1e-9)
    for i in range(6):
        assert np.allclose(ba[i], compiled.rollout(*args, u[i], d, 5e-3, 10)[0], rtol=1e-14)


@pytest.mark.parametrize("kern", [python, compiled] if compiled else [python])
def test_floor_violation_behaviour(kern):
    params, topo, pvec, x0, u0 = _setup()
    args = (pvec, topo.n_gen, topo.n_sc)
    with pytest.raises(VoltageFloorViolation):
        kern.rk4_step(*args, x0, -6000.0, np.array([60e6, 0.0]), 5e-3, 10)
    u = np.full(20, -6000.0)
    d = np.tile([60e6, 0.0], (20, 1))
    traj, ok = kern.rollout(*args, x0, u, d, 5e-3, 10)
    assert not ok
    assert np.all(traj[:, 0] >= params.v_floor)
    _, oks = kern.rollout_batch(*args, x0, np.vstack([u, np.full(20, u0)]), d, 5e-3, 10)
    assert not oks[0]

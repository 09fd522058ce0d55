import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvdc_lnmpc.pi import PiController, PiGains, PiState, itae, pi_step


def test_zero_error_zero_output():
    u, st_ = pi_step(PiGains(1.0, 10.0), PiState(), 6000.0, 6000.0, 5e-3)
    assert u == 0.0 and st_.integral == 0.0


def test_proportional_only():
    u, _ = pi_step(PiGains(2.0, 0.0), PiState(), 6000.0, 5995.0, 5e-3)
    assert u == pytest.approx(10.0)


def test_integral_grows_linearly_until_saturation():
    gains = PiGains(0.0, 100.0, u_min=-50.0, u_max=50.0)
    state = PiState()
    outs = []
    for _ in range(40):
        u, state = pi_step(gains, state, 6000.0, 5990.0, 5e-3)
        outs.append(u)
    outs = np.array(outs)
    # ki * e * k * dt before saturation; output uses the integral before the update
    k = np.arange(40)
    linear = 100.0 * 10.0 * 5e-3 * k
    free = linear < 50.0
    assert np.allclose(outs[free], linear[free])
    assert np.allclose(outs[~free], 50.0) and np.all(outs <= 50.0)


@settings(max_examples=200, deadline=None)
@given(e=st.floats(-1e4, 1e4), integral=st.floats(-1e3, 1e3), kp=st.floats(0, 50),
       ki=st.floats(0, 500))
def test_output_always_within_limits(e, integral, kp, ki):
    gains = PiGains(kp, ki, u_min=-600, u_max=600)
    u, _ = pi_step(gains, PiState(integral), 6000.0, 6000.0 - e, 5e-3)
    assert -600 <= u <= 600


@settings(max_examples=100, deadline=None)
@given(e1=st.floats(-10, 10), e2=st.floats(-10, 10), integral=st.floats(-0.1, 0.1))
def test_superposition_when_unsaturated(e1, e2, integral):
    gains = PiGains(1.0, 20.0, u_min=-1e9, u_max=1e9)
    s = PiState(integral)
    zero = PiState(0.0)
    u12, st12 = pi_step(gains, s, 0.0, -(e1 + e2), 5e-3)
    u1, st1 = pi_step(gains, s, 0.0, -e1, 5e-3)
    u2, st2 = pi_step(gains, zero, 0.0, -e2, 5e-3)
    assert u12 == pytest.approx(u1 + u2, abs=1e-9)
    assert st12.integral == pytest.approx(st1.integral + st2.integral, abs=1e-12)


def _recovery_time(gains, pre_steps):
    """Steps until |u - target| is within 2 % of the target after a long
    saturating error is removed (first-order plant v' = (u - v)/tau)."""
    dt, tau, target = 5e-3, 0.05, 100.0
    state, v = PiState(), 0.0
    for _ in range(pre_steps):  # reference far above reach: saturation
        u, state = pi_step(gains, state, 1e4, v, dt)
        v += dt * (u - v) / tau
    for k in range(20000):
        u, state = pi_step(gains, state, target, v, dt)
        v += dt * (u - v) / tau
        if abs(v - target) <= 0.02 * target and k > 0:
            tail = [v]
            s2, v2 = state, v
            for _ in range(200):
                u2, s2 = pi_step(gains, s2, target, v2, dt)
                v2 += dt * (u2 - v2) / tau
                tail.append(v2)
            if np.all(np.abs(np.array(tail) - target) <= 0.02 * target):
                return k
    return np.inf


def test_anti_windup_limits_recovery():
    gains = PiGains(0.5, 20.0, u_min=-200.0, u_max=200.0, k_aw=100.0)
    unsat = _recovery_time(gains, 0)
    long_sat = _recovery_time(gains, 2000)
    assert long_sat <= 2 * max(unsat, 1)


def test_bumpless_reset(plant_setup):
    params, topo = plant_setup
    ctl = PiController(PiGains(0.6, 140.0), params, topo)
    ctl.reset(u0=173.0)
    x = np.zeros(topo.n_x)
    x[0] = params.v_ref
    u, _ = ctl.step(0.0, x, np.zeros(2))
    assert u == pytest.approx(173.0)


def test_gains_validation():
    with pytest.raises(ValueError):
        PiGains(-1.0, 1.0)
    with pytest.raises(ValueError):
        PiGains(1.0, 1.0, u_min=1.0, u_max=0.0)


def test_itae_of_constant_error():
    t = np.linspace(0, 2, 2001)
    assert itae(t, np.ones_like(t)) == pytest.approx(2.0, rel=1e-6)

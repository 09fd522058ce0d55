import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvdc_lnmpc.errors import NoConvergence, VoltageFloorViolation
from mvdc_lnmpc.model import (BoxBounds, Plant, PlantParams, State, Topology, default_params,
                              derivatives, find_equilibrium, jacobian_analytic, load_params,
                              restoration_equilibrium, step, unit_powers)


def zero_load_state(params, topo):
    x = np.zeros(topo.n_x)
    x[0] = params.v_ref
    return x


def test_zero_load_is_rest(plant_setup):
    params, topo = plant_setup
    xdot = derivatives(params, topo, zero_load_state(params, topo), 0.0, [0.0, 0.0])
    assert np.array_equal(xdot, np.zeros(topo.n_x))


def test_cpl_drains_bus_at_hand_rate(plant_setup):
    params, topo = plant_setup
    xdot = derivatives(params, topo, zero_load_state(params, topo), 0.0, [10e6, 0.0])
    assert xdot[0] == pytest.approx(-10e6 / (0.01 * 6000), rel=1e-12)
    assert np.all(xdot[1:] == 0)


def test_charged_sc_branch_discharges(plant_setup):
    params, topo = plant_setup
    x = zero_load_state(params, topo)
    x[topo.v_c] = params.v_ref
    xdot = derivatives(params, topo, x, 0.0, [0.0, 0.0])
    expected = -params.v_ref / np.array(params.l[topo.n_gen:])
    assert np.allclose(xdot[topo.i_sc], expected, rtol=1e-12)
    assert np.all(xdot[topo.i_sc] < 0)


def test_voltage_floor_raises(plant_setup):
    params, topo = plant_setup
    x = zero_load_state(params, topo)
    x[0] = 0.05 * params.v_ref
    with pytest.raises(VoltageFloorViolation):
        derivatives(params, topo, x, 0.0, [1e6, 0.0])


def test_step_keeps_equilibrium(plant_setup):
    params, topo = plant_setup
    x = zero_load_state(params, topo)
    assert np.allclose(step(params, topo, x, 0.0, [0.0, 0.0]), x, rtol=0, atol=1e-12)


def test_rk4_refinement_converges(plant_setup):
    params, topo = plant_setup
    d = np.array([10e6, 0.0])
    x0 = zero_load_state(params, topo)
    x0[topo.i_gen] = 100.0

    def run(dt, n):
        x = x0.copy()
        for _ in range(n):
            x = step(params, topo, x, 0.0, d, dt=dt, substeps=10)
        return x

    coarse, fine = run(5e-3, 200), run(2.5e-3, 400)
    assert np.linalg.norm(coarse - fine) / np.linalg.norm(fine) <= 1e-9


def _scalar_rk4(dt, substeps, n):
    h = dt / substeps
    x = 1.0
    for _ in range(n * substeps):
        k1 = -x
        k2 = -(x + 0.5 * h * k1)
        k3 = -(x + 0.5 * h * k2)
        k4 = -(x + h * k3)
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_rk4_decay_surrogate():
    # one sampling period of x' = -x with the default substep count
    assert _scalar_rk4(5e-3, 10, 1) == pytest.approx(np.exp(-0.005), abs=1e-9)
    assert _scalar_rk4(5e-3, 10, 1) == pytest.approx(0.9950125, abs=1e-7)


def test_rk4_fourth_order():
    exact = np.exp(-1.0)
    e1 = abs(_scalar_rk4(0.2, 1, 5) - exact)
    e2 = abs(_scalar_rk4(0.1, 1, 10) - exact)
    assert e1 / e2 >= 15


def test_unit_powers():
    topo = Topology()
    x = np.zeros(topo.n_x)
    x[0] = 6000.0
    assert np.all(unit_powers(x, topo) == 0)
    x[topo.currents] = 500.0
    assert np.all(unit_powers(x, topo) == 3e6)


def test_equilibrium_zero_load(plant_setup):
    params, topo = plant_setup
    x = find_equilibrium(params, topo, [0.0, 0.0])
    assert np.allclose(x, zero_load_state(params, topo), atol=1e-9)


def test_equilibrium_residual_small(plant_setup):
    params, topo = plant_setup
    d = np.array([10e6, 0.0])
    x = find_equilibrium(params, topo, d)
    assert np.max(np.abs(derivatives(params, topo, x, 0.0, d))) <= 1e-8 * params.v_ref
    assert np.all(x[topo.i_sc] == 0.0)


def test_infeasible_load_has_no_equilibrium(plant_setup):
    params, topo = plant_setup
    with pytest.raises(NoConvergence):
        find_equilibrium(params, topo, [200e6, 0.0])


@settings(max_examples=30, deadline=None)
@given(cpl=st.floats(0.0, 15e6), ppl=st.floats(0.0, 5e6), u=st.floats(-300.0, 300.0))
def test_equilibrium_invariants(cpl, ppl, u):
    params, topo = default_params()
    d = np.array([cpl, ppl])
    x = find_equilibrium(params, topo, d, u)
    assert np.all(x[topo.i_sc] == 0.0)
    load = cpl + ppl
    assert x[0] * x[topo.currents].sum() == pytest.approx(load, rel=1e-6, abs=0.1)
    nxt = step(params, topo, x, u, d)
    assert np.linalg.norm(nxt - x) <= 1e-9 * np.linalg.norm(x)


def test_restoration_equilibrium_holds_v_ref(plant_setup):
    params, topo = plant_setup
    d = np.array([10e6, 3e6])
    x, u = restoration_equilibrium(params, topo, d)
    assert x[0] == params.v_ref
    assert np.max(np.abs(derivatives(params, topo, x, u, d))) < 1e-6
    assert np.allclose(find_equilibrium(params, topo, d, u), x, rtol=1e-9, atol=1e-6)


def test_analytic_jacobian_matches_linear_structure(plant_setup):
    params, topo = plant_setup
    d = np.array([10e6, 0.0])
    x, u = restoration_equilibrium(params, topo, d)
    a, b = jacobian_analytic(params, topo, x, u, d)
    assert a[0, 0] == pytest.approx(10e6 / (params.c_eq * params.v_ref ** 2))
    assert np.allclose(b[topo.i_gen, 0], 1 / np.array(params.l[:topo.n_gen]))
    assert np.all(b[topo.i_sc, 0] == 0)


def test_params_roundtrip(tmp_path, plant_setup):
    params, topo = plant_setup
    path = tmp_path / "p.json"
    path.write_text(json.dumps(params.to_dict(topo)))
    p2, t2 = load_params(path)
    assert p2 == params and t2 == topo


def test_params_reject_bad_shapes():
    params = PlantParams(r=(0.3, 0.3))
    with pytest.raises(ValueError):
        params.check(Topology())
    with pytest.raises(ValueError):
        PlantParams(c_eq=-1.0)


def test_scaled_params_mismatch(plant_setup):
    params, _ = plant_setup
    p2 = params.scaled(c_eq=1.1, r=0.9)
    assert p2.c_eq == pytest.approx(params.c_eq * 1.1)
    assert np.allclose(p2.r, np.array(params.r) * 0.9)


def test_state_vector_roundtrip(plant_setup):
    params, topo = plant_setup
    x, _ = restoration_equilibrium(params, topo, [10e6, 0.0])
    assert np.array_equal(State.from_vector(x, topo).to_vector(), x)


def test_box_bounds(plant_setup):
    params, topo = plant_setup
    b = BoxBounds.from_params(params, topo)
    assert b.x_lo[0] == pytest.approx(0.95 * params.v_ref)
    assert b.x_hi[1] == pytest.approx(params.p_max[0] / params.v_ref)
    x, _ = restoration_equilibrium(params, topo, [10e6, 0.0])
    assert b.state_violation(x) == 0.0
    x[0] = 1.1 * params.v_ref
    assert b.state_violation(x) == pytest.approx(0.05 * params.v_ref)


def test_plant_rollout_matches_steps(plant_setup):
    params, topo = plant_setup
    plant = Plant(params, topo)
    d = np.array([10e6, 3e6])
    x0, u0 = restoration_equilibrium(params, topo, [10e6, 0.0])
    u_seq = np.full(5, u0)
    traj, ok = plant.rollout(x0, u_seq, np.tile(d, (5, 1)))
    assert ok
    x = x0
    for j in range(5):
        x = plant.step(x, u_seq[j], d)
        assert np.array_equal(traj[j + 1], x)

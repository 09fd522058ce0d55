import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mvdc_lnmpc.errors import NeverSettles, ScenarioMismatch, ZeroDesiredValue
from mvdc_lnmpc.harness import (SimTrace, compare, mape, metrics, read_csv, run_closed_loop,
                                settling_time, steady_mask, trace_to_csv, write_csv,
                                write_json, write_svg)
from mvdc_lnmpc.model import Plant
from mvdc_lnmpc.pi import PiController, PiGains
from mvdc_lnmpc.scenario import LoadProfile, ScenarioConfig, case_study_1


def pi_controller(params, topo):
    return PiController(PiGains(0.607, 143.8), params, topo)


@pytest.fixture(scope="module")
def short_run(plant_setup):
    params, topo = plant_setup
    sc = ScenarioConfig(LoadProfile(10e6, ppl_pulses=((0.2, 0.3, 3e6),)), duration=1.0,
                        label="short")
    return run_closed_loop(Plant(params, topo), pi_controller(params, topo), sc), sc


def test_mape_cases():
    assert mape([5.0, 6.0], [5.0, 6.0]) == 0.0
    assert mape([100.0, 200.0], [99.0, 202.0]) == pytest.approx(1.0)
    assert mape([10.0], [11.0]) == pytest.approx(10.0)
    with pytest.raises(ZeroDesiredValue):
        mape([0.0, 1.0], [0.0, 1.0])


def test_settling_constant_signal():
    t = np.linspace(0, 1, 101)
    assert settling_time(t, np.full_like(t, 3.0), 0.0) == 0.0


def test_settling_first_order_decay():
    tau = 0.1
    t = np.arange(0, 2.0 + 1e-12, 1e-4)
    ts = settling_time(t, np.exp(-t / tau), 0.0, band=0.02)
    assert ts == pytest.approx(tau * np.log(50), abs=2e-4)


def test_settling_measured_from_last_entry():
    t = np.arange(0, 1.0001, 0.01)
    y = np.ones_like(t)
    y[5] = 1.5    # leaves the band early ...
    y[40] = 0.5   # ... and again later
    assert settling_time(t, y, 0.0) == pytest.approx(0.41)


def test_settling_never():
    t = np.linspace(0, 1, 101)
    y = np.where(np.arange(101) % 2 == 0, 1.0, 2.0)  # sustained oscillation
    assert settling_time(t, y, 0.0, reference=1.0) == pytest.approx(1.0)
    with pytest.raises(NeverSettles):
        settling_time(t, y, 0.0, reference=1.0, strict=True)


def test_closed_loop_trace_shape(short_run, plant_setup):
    trace, sc = short_run
    _, topo = plant_setup
    assert len(trace) == sc.n_steps + 1
    assert trace.x.shape == (sc.n_steps + 1, topo.n_x)
    assert not trace.aborted


def test_zero_load_stays_put(plant_setup):
    params, topo = plant_setup
    sc = ScenarioConfig(LoadProfile(0.0), duration=0.5)
    trace = run_closed_loop(Plant(params, topo), pi_controller(params, topo), sc)
    assert np.max(np.abs(trace.v_o / params.v_ref - 1)) <= 1e-6


def test_floor_violation_aborts(plant_setup):
    params, topo = plant_setup
    sc = ScenarioConfig(LoadProfile(10e6, ppl_pulses=((0.05, 1.0, 200e6),)), duration=0.5)
    trace = run_closed_loop(Plant(params, topo), pi_controller(params, topo), sc)
    assert trace.aborted
    assert len(trace) < sc.n_steps + 1
    assert np.all(trace.v_o >= params.v_floor)


def test_steady_mask_excludes_edges(short_run):
    trace, _ = short_run
    mask = steady_mask(trace)
    t = trace.t
    assert not mask[(t >= 0.2) & (t < 0.25)].any()
    assert mask[-1]


def test_metrics_fields(short_run):
    trace, sc = short_run
    rep = metrics(trace, sc)
    assert set(rep.settling) == {0.2, 0.5}
    assert rep.mape_voltage > 0
    assert rep.power_balance <= 0.1
    assert rep.to_dict()["settling"]["0.2"] == rep.settling[0.2]


def test_compare_identical_and_swapped(short_run, plant_setup):
    trace, sc = short_run
    same = compare(trace, trace, sc)
    assert same["deltas"]["mape_voltage"] == 0.0
    assert all(v == 0.0 for v in same["deltas"]["settling"].values())
    params, topo = plant_setup
    other = run_closed_loop(Plant(params, topo),
                            PiController(PiGains(0.2, 40.0), params, topo), sc)
    ab, ba = compare(trace, other, sc), compare(other, trace, sc)
    assert ab["deltas"]["mape_voltage"] == -ba["deltas"]["mape_voltage"]
    for k in ab["deltas"]["settling"]:
        assert ab["deltas"]["settling"][k] == -ba["deltas"]["settling"][k]


def test_compare_rejects_mismatch(short_run, plant_setup):
    trace, sc = short_run
    params, topo = plant_setup
    shorter = ScenarioConfig(sc.profile, duration=0.5, label="short")
    other = run_closed_loop(Plant(params, topo), pi_controller(params, topo), shorter)
    with pytest.raises(ScenarioMismatch):
        compare(trace, other, sc)


def test_empty_trace_csv(plant_setup):
    _, topo = plant_setup
    empty = SimTrace(topo=topo, t=np.zeros(0), x=np.zeros((0, topo.n_x)), u=np.zeros(0),
                     d=np.zeros((0, 2)), eps=np.zeros(0), solve_ms=np.zeros(0))
    text = trace_to_csv(empty)
    assert text.count("\n") == 1 and text.startswith("t,v_o,delta_v,p_cpl,p_ppl")


def test_csv_roundtrip_byte_identical(short_run, tmp_path, plant_setup):
    trace, _ = short_run
    _, topo = plant_setup
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(trace, p1)
    write_csv(read_csv(p1, topo), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_json_and_svg(short_run, tmp_path):
    trace, sc = short_run
    write_json(trace, tmp_path / "t.json")
    write_json(metrics(trace, sc), tmp_path / "m.json")
    write_svg(trace, tmp_path / "t.svg")
    root = ET.parse(tmp_path / "t.svg").getroot()
    assert root.tag.endswith("svg")
    assert b"<dc:date>" not in (tmp_path / "t.svg").read_bytes()


def test_determinism_same_seed(plant_setup):
    params, topo = plant_setup
    from mvdc_lnmpc.scenario import case_study_2
    sc = ScenarioConfig(case_study_2(seed=3).profile, duration=0.3, label="cs2")
    runs = [run_closed_loop(Plant(params, topo), pi_controller(params, topo), sc)
            for _ in range(2)]
    assert trace_to_csv(runs[0], False) == trace_to_csv(runs[1], False)


def test_cs1_pulse_edges(plant_setup):
    trace_sc = case_study_1()
    assert trace_sc.profile.events() == [2.0, 3.0, 5.0, 7.0]

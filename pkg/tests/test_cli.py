import json

import pytest

from mvdc_lnmpc.cli import EXIT_OK, EXIT_VIOLATION, main
from mvdc_lnmpc.model import default_params
from mvdc_lnmpc.scenario import LoadProfile, ScenarioConfig, save_scenario


@pytest.fixture
def short_scenario(tmp_path):
    path = tmp_path / "short.json"
    save_scenario(ScenarioConfig(LoadProfile(10e6, ppl_pulses=((0.1, 0.1, 3e6),)),
                                 duration=0.3, label="short"), path)
    return str(path)


def test_synth_check_text(capsys):
    assert main(["synth-check"]) == EXIT_OK
    out = capsys.readouterr().out
    for key in ("K =", "W_P", "alpha =", "Lyapunov residual", "spectral radius"):
        assert key in out


def test_synth_check_json(capsys, tmp_path):
    params, topo = default_params()
    pfile = tmp_path / "p.json"
    pfile.write_text(json.dumps(params.to_dict(topo)))
    assert main(["synth-check", "--params", str(pfile), "--format", "json"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["spectral_radius"] < 1 and rep["alpha"] > 0
    assert rep["residual_gramian_form"] <= 1e-8


@pytest.mark.parametrize("ctl", ["lnmpc", "pi"])
def test_simulate_writes_outputs(tmp_path, short_scenario, ctl):
    out = tmp_path / "out"
    code = main(["simulate", "--scenario", short_scenario, "--controller", ctl,
                 "--seed", "1", "--out", str(out), "--plots"])
    assert code == EXIT_OK
    assert (out / f"short_{ctl}.csv").exists()
    assert (out / f"short_{ctl}.svg").exists()
    rep = json.loads((out / f"short_{ctl}_metrics.json").read_text())
    assert rep["controller"] == ctl


def test_simulate_json_format(tmp_path, short_scenario):
    out = tmp_path / "o"
    main(["simulate", "--scenario", short_scenario, "--controller", "pi", "--out", str(out),
          "--format", "json"])
    data = json.loads((out / "short_pi.json").read_text())
    assert len(data["t"]) == 61


def test_compare_command(tmp_path, short_scenario, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--scenario", short_scenario, "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "short_compare.json").read_text())
    assert set(data) == {"a", "b", "deltas", "ratios"}
    assert "MAPE" in capsys.readouterr().out


def test_plant_violation_exit_code(tmp_path):
    path = tmp_path / "crash.json"
    save_scenario(ScenarioConfig(LoadProfile(10e6, ppl_pulses=((0.05, 1.0, 200e6),)),
                                 duration=0.3, label="crash"), path)
    code = main(["simulate", "--scenario", str(path), "--controller", "pi",
                 "--out", str(tmp_path / "c")])
    assert code == EXIT_VIOLATION


def test_degraded_exit_code(tmp_path, short_scenario, monkeypatch):
    from mvdc_lnmpc import lnmpc
    from mvdc_lnmpc.cli import EXIT_DEGRADED
    from mvdc_lnmpc.errors import MvdcError

    def broken(*a, **k):
        raise MvdcError("forced failure")

    monkeypatch.setattr(lnmpc, "solve_sqp", broken)
    code = main(["simulate", "--scenario", short_scenario, "--controller", "lnmpc",
                 "--out", str(tmp_path / "d")])
    assert code == EXIT_DEGRADED


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["simulate", "--controller", "pi"])

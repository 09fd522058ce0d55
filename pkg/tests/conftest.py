import numpy as np
import pytest

from mvdc_lnmpc.lnmpc import build_terminal_ingredients, default_ocp_config
from mvdc_lnmpc.model import default_params


@pytest.fixture(scope="session")
def plant_setup():
    return default_params()


@pytest.fixture(scope="session")
def nominal_load():
    return np.array([10e6, 0.0])


@pytest.fixture(scope="session")
def synthesis(plant_setup, nominal_load):
    params, topo = plant_setup
    cfg = default_ocp_config(params, topo)
    ti = build_terminal_ingredients(params, topo, cfg, nominal_load)
    return params, topo, cfg, ti


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

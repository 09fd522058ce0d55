"""Grid search of the baseline PI gains.

Minimises the ITAE of the bus-voltage error over a 3 MW pulse (1 s on a
10 MW CPL, 2 s run) with the default plant. Prints the best gains as JSON.
"""

import itertools
import json

import numpy as np

from mvdc_lnmpc.harness import run_closed_loop
from mvdc_lnmpc.model import Plant, default_params
from mvdc_lnmpc.pi import PiController, PiGains, itae
from mvdc_lnmpc.scenario import LoadProfile, ScenarioConfig


def main():
    params, topo = default_params()
    plant = Plant(params, topo)
    sc = ScenarioConfig(LoadProfile(10e6, ppl_pulses=((0.2, 1.0, 3e6),)), duration=2.0,
                        label="pi-tune")
    best = None
    for kp, ki in itertools.product(np.geomspace(0.05, 20, 13), np.geomspace(1, 5000, 13)):
        gains = PiGains(kp=float(kp), ki=float(ki), u_min=-600, u_max=600)
        tr = run_closed_loop(plant, PiController(gains, params, topo), sc)
        if tr.aborted:
            continue
        err = params.v_ref - tr.v_o
        if not np.all(np.isfinite(err)):
            continue
        score = itae(tr.t, err)
        if best is None or score < best[0]:
            best = (score, float(kp), float(ki))
    print(json.dumps({"itae": best[0], "kp": best[1], "ki": best[2]}))


if __name__ == "__main__":
    main()

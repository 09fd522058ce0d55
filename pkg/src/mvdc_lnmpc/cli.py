"""Command-line entry point: ``simulate``, ``compare`` and ``synth-check``.

Exit codes: 0 success, 2 the LNMPC fell back to its degraded mode at least
once, 3 the plant left its voltage floor and the run was aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import lintools
from ._backend import BACKEND
from .harness import compare, metrics, run_closed_loop, write_csv, write_json, write_svg
from .lnmpc import (LNMPC, build_terminal_ingredients, load_controller_config,
                    ocp_config_from_dict)
from .model import Plant, default_params, load_params
from .pi import PiController, PiGains
from .scenario import get_scenario

EXIT_OK, EXIT_DEGRADED, EXIT_VIOLATION = 0, 2, 3

log = logging.getLogger("mvdc_lnmpc")


def _params(path):
    return default_params() if path is None else load_params(path)


def make_controller(kind, params, topo, raw_cfg, d_nominal, backend=None):
    """LNMPC or PI controller from a raw configuration dict."""
    if kind == "lnmpc":
        cfg = ocp_config_from_dict(raw_cfg["lnmpc"], params, topo)
        return LNMPC.from_config(params, topo, cfg, d_nominal, backend=backend)
    if kind == "pi":
        sec = raw_cfg["pi"]
        dt = raw_cfg["lnmpc"].get("dt", 5e-3)
        return PiController(PiGains.from_dict(sec, params), params, topo, dt)
    raise ValueError(f"unknown controller {kind!r}")


def simulate_one(kind, scenario_name, params_path, config_path, seed, backend=None):
    params, topo = _params(params_path)
    raw = load_controller_config(config_path)
    scenario = get_scenario(scenario_name, seed)
    if abs(raw["lnmpc"].get("dt", scenario.dt) - scenario.dt) > 1e-12:
        raise ValueError("controller dt differs from the scenario dt")
    ctl = make_controller(kind, params, topo, raw, scenario.profile.nominal(0.0), backend)
    plant = Plant(params, topo, scenario.dt, raw["lnmpc"].get("substeps", 10), backend=backend)
    trace = run_closed_loop(plant, ctl, scenario)
    return trace, scenario


def _exit_code(*traces):
    if any(tr.aborted for tr in traces):
        return EXIT_VIOLATION
    if any(tr.degraded is not None and tr.degraded.any() for tr in traces):
        return EXIT_DEGRADED
    return EXIT_OK


def _write_trace(trace, out, stem, fmt):
    path = out / f"{stem}.{fmt}"
    if fmt == "csv":
        write_csv(trace, path)
    else:
        write_json(trace, path)
    return path


def cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace, scenario = simulate_one(args.controller, args.scenario, args.params, args.config,
                                   args.seed, args.backend)
    report = metrics(trace, scenario)
    stem = f"{scenario.label}_{args.controller}"
    _write_trace(trace, out, stem, args.format)
    write_json(report, out / f"{stem}_metrics.json")
    if args.plots:
        params, _ = _params(args.params)
        write_svg(trace, out / f"{stem}.svg", params.v_ref, params.v_band)
    print(f"{stem}: MAPE {report.mape_voltage:.4g} %, max deviation "
          f"{report.max_deviation:.4g} %, mean solve {report.solve_ms_mean:.3g} ms")
    if trace.aborted:
        print(trace.aborted, file=sys.stderr)
    return _exit_code(trace)


def cmd_compare(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    job = (args.scenario, args.params, args.config, args.seed, args.backend)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=2) as pool:
            fut = {k: pool.submit(simulate_one, k, *job) for k in ("lnmpc", "pi")}
            results = {k: f.result() for k, f in fut.items()}
    else:
        results = {k: simulate_one(k, *job) for k in ("lnmpc", "pi")}
    (tr_a, scenario), (tr_b, _) = results["lnmpc"], results["pi"]
    for tr in (tr_a, tr_b):
        _write_trace(tr, out, f"{scenario.label}_{tr.controller}", args.format)
    cmp = compare(tr_a, tr_b, scenario)
    write_json(cmp, out / f"{scenario.label}_compare.json")
    if args.plots:
        params, _ = _params(args.params)
        write_svg([tr_a, tr_b], out / f"{scenario.label}_compare.svg", params.v_ref,
                  params.v_band)
    ra, rb = cmp["a"], cmp["b"]
    print(f"{'metric':<28}{'lnmpc':>14}{'pi':>14}")
    print(f"{'MAPE v_o (%)':<28}{ra.mape_voltage:>14.4g}{rb.mape_voltage:>14.4g}")
    print(f"{'max deviation (%)':<28}{ra.max_deviation:>14.4g}{rb.max_deviation:>14.4g}")
    for e in ra.settling_tight:
        print(f"{f'settling 0.2% @ {e:g} s':<28}{ra.settling_tight[e]:>14.4g}"
              f"{rb.settling_tight[e]:>14.4g}")
    return _exit_code(tr_a, tr_b)


def synth_report(params, topo, raw_cfg, d_nominal):
    """Offline synthesis summary as a plain dict."""
    cfg = ocp_config_from_dict(raw_cfg["lnmpc"], params, topo)
    t0 = time.perf_counter()
    ti = build_terminal_ingredients(params, topo, cfg, d_nominal)
    a_cl = ti.closed_loop
    w_gram = lintools.dlyap(a_cl, ti.q_star, form="gramian")
    w_std = lintools.dlyap(a_cl, ti.q_star, form="standard")
    elapsed = time.perf_counter() - t0
    return {
        "k_gain": ti.k_gain.tolist(),
        "w_p": ti.w_p.tolist(),
        "lyapunov_form": ti.lyapunov_form,
        "alpha": ti.alpha,
        "residual_gramian_form": lintools.lyapunov_residual(a_cl, w_gram, ti.q_star, "gramian"),
        "residual_standard_form": lintools.lyapunov_residual(a_cl, w_std, ti.q_star,
                                                             "standard"),
        "w_p_positive_definite": bool(lintools.is_positive_definite(ti.w_p)),
        "w_p_gramian_positive_definite": bool(lintools.is_positive_definite(w_gram)),
        "spectral_radius": lintools.spectral_radius(a_cl),
        "x_e": ti.x_e.tolist(),
        "u_e": ti.u_e,
        "seconds": elapsed,
    }


def cmd_synth_check(args):
    params, topo = _params(args.params)
    raw = load_controller_config(args.config)
    d = np.array([args.cpl * 1e6, args.ppl * 1e6])
    rep = synth_report(params, topo, raw, d)
    if args.format == "json":
        print(json.dumps(rep, indent=2))
        return EXIT_OK
    with np.printoptions(precision=5, linewidth=120, suppress=False):
        print("K =", np.array(rep["k_gain"]))
        print(f"W_P ({rep['lyapunov_form']} orientation) =")
        print(np.array(rep["w_p"]))
    print(f"alpha = {rep['alpha']:.6g}")
    print(f"Lyapunov residual (A W A' - W + Q) = {rep['residual_gramian_form']:.3e}")
    print(f"Lyapunov residual (A' W A - W + Q) = {rep['residual_standard_form']:.3e}")
    print(f"W_P positive definite = {rep['w_p_positive_definite']}")
    print(f"spectral radius of A_d + B_d K = {rep['spectral_radius']:.6f}")
    print(f"synthesis time = {rep['seconds']:.3f} s")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="mvdc-lnmpc",
                                 description="LNMPC voltage restoration for an MVDC microgrid")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--params", help="plant parameter JSON (default: packaged)")
        p.add_argument("--config", help="controller JSON (default: packaged)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--backend", choices=("cython", "python"), default=None)

    p = sub.add_parser("simulate", help="one closed-loop run")
    p.add_argument("--scenario", required=True, help="cs1, cs2 or a scenario JSON file")
    p.add_argument("--controller", choices=("lnmpc", "pi"), default="lnmpc")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true", help="write an SVG figure")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="LNMPC and PI on the same scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="run the two controllers in parallel")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth-check", help="offline terminal-ingredient synthesis")
    p.add_argument("--cpl", type=float, default=10.0, help="nominal CPL (MW)")
    p.add_argument("--ppl", type=float, default=0.0, help="nominal PPL (MW)")
    common(p)
    p.set_defaults(func=cmd_synth_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", args.backend or BACKEND)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Closed-loop runs, metrics and exports.

The loop at every sampling instant is: measure the state, sample the load,
ask the controller for ``dV``, advance the plant over one period with both
held.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NeverSettles, ScenarioMismatch, VoltageFloorViolation, ZeroDesiredValue
from .model import Topology, restoration_equilibrium, unit_powers
from .scenario import ScenarioConfig, load_at

log = logging.getLogger(__name__)

STEADY_SLOPE = 0.1     # V/s
STEADY_WINDOW = 0.2    # s
SETTLING_BAND = 0.02
SC_TAIL = 0.5          # s, trailing part of a segment used for SC duty
EPS_ZERO = 1e-6


@dataclass
class SimTrace:
    """Time-indexed record of one closed-loop run (``n_steps + 1`` rows)."""

    topo: Topology
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    eps: np.ndarray
    solve_ms: np.ndarray
    status: list = field(default_factory=list)
    iterations: np.ndarray = None
    degraded: np.ndarray = None
    label: str = ""
    controller: str = ""
    seed: int | None = None
    aborted: str = ""

    @property
    def powers(self):
        return unit_powers(self.x, self.topo)

    @property
    def v_o(self):
        return self.x[:, 0]

    def __len__(self):
        return len(self.t)

    def columns(self):
        labels = self.topo.unit_labels()
        return (["t", "v_o", "delta_v", "p_cpl", "p_ppl"]
                + [f"i_{u}" for u in labels]
                + [f"v_c_sc{i + 1}" for i in range(self.topo.n_sc)]
                + [f"p_{u}" for u in labels] + ["eps", "solve_ms"])

    def table(self):
        """Rows in CSV column order."""
        topo = self.topo
        if len(self.t) == 0:
            return np.zeros((0, len(self.columns())))
        return np.column_stack([self.t, self.x[:, 0], self.u, self.d,
                                self.x[:, topo.currents], self.x[:, topo.v_c],
                                self.powers, self.eps, self.solve_ms])


def _initial_state(plant, scenario, d0):
    x0, u0 = restoration_equilibrium(plant.params, plant.topo, d0)
    return x0, u0


def run_closed_loop(plant, controller, scenario: ScenarioConfig, x0=None, seed=None):
    """Simulate ``scenario`` with ``controller`` acting on ``plant``.

    The run starts at the voltage-restored equilibrium of the noise-free
    initial load unless ``x0`` is given, with the controller primed to hold
    it. A plant voltage-floor violation stops the run and the trace
    collected so far is returned with ``aborted`` set.
    """
    scenario = scenario.with_seed(seed)
    prof = scenario.profile
    topo = plant.topo
    n = scenario.n_steps
    dt = scenario.dt
    d_nom0 = prof.nominal(0.0)
    if x0 is None:
        x0, u0 = _initial_state(plant, scenario, d_nom0)
    else:
        u0 = None
    controller.reset(x0, d_nom0, u0)
    preview_len = getattr(getattr(controller, "cfg", None), "n_p", 0)
    wants_preview = getattr(getattr(controller, "cfg", None), "preview", "held") == "scenario"

    t_arr = np.arange(n + 1) * dt
    xs = np.empty((n + 1, topo.n_x))
    us = np.zeros(n + 1)
    ds = np.zeros((n + 1, 2))
    eps = np.zeros(n + 1)
    ms = np.zeros(n + 1)
    iters = np.zeros(n + 1, dtype=int)
    degraded = np.zeros(n + 1, dtype=bool)
    status = [""] * (n + 1)
    x = np.asarray(x0, float)
    aborted = ""
    u = float(u0) if u0 is not None else 0.0
    last = n
    for k in range(n):
        t = t_arr[k]
        d = load_at(prof, t)
        preview = None
        if wants_preview:
            preview = np.array([load_at(prof, t + j * dt) for j in range(preview_len)])
        t0 = time.perf_counter()
        u, diag = controller.step(t, x, d, preview)
        elapsed = 1e3 * (time.perf_counter() - t0)
        xs[k], us[k], ds[k], ms[k] = x, u, d, elapsed
        if diag is not None:
            eps[k] = diag.eps
            iters[k] = diag.iterations
            degraded[k] = diag.degraded
            status[k] = diag.status
            if diag.degraded:
                log.warning("t=%.3f s: controller degraded (%s)", t, diag.message)
        try:
            x = plant.step(x, u, d)
        except VoltageFloorViolation as exc:
            aborted = f"plant voltage floor violated at t={t:.4f} s: {exc}"
            log.error(aborted)
            last = k
            break
    else:
        xs[n] = x
        us[n] = u
        ds[n] = load_at(prof, t_arr[n])
        status[n] = "final"
    keep = slice(0, last + 1)
    return SimTrace(topo=topo, t=t_arr[keep], x=xs[keep], u=us[keep], d=ds[keep],
                    eps=eps[keep], solve_ms=ms[keep], status=status[:last + 1],
                    iterations=iters[keep], degraded=degraded[keep],
                    label=scenario.label, controller=getattr(controller, "name", ""),
                    seed=prof.noise.seed if prof.noise.enabled else None, aborted=aborted)


def mape(desired, actual):
    """Mean absolute percentage error (%).

    Raises
    ------
    ZeroDesiredValue
        If any desired entry is zero.
    """
    desired = np.atleast_1d(np.asarray(desired, float))
    actual = np.atleast_1d(np.asarray(actual, float))
    if desired.shape != actual.shape:
        raise ValueError("desired and actual must have equal length")
    if np.any(desired == 0):
        raise ZeroDesiredValue("desired series contains zeros")
    return float(np.mean(np.abs((desired - actual) / desired)) * 100.0)


def settling_time(t, y, event_time, band=SETTLING_BAND, end_time=None, reference=None,
                  strict=False, tail=0.05):
    """Time from ``event_time`` until ``y`` enters, and stays in, the band
    around its final value.

    The final value is the mean over the trailing ``tail`` fraction of the
    window ``[event_time, end_time]``, so measurement noise does not move
    it. The band half-width is ``band * reference``; ``reference`` defaults
    to the larger of ``|final|`` and the size of the excursion at the event,
    so it reads as a relative band for offsets (bus voltage) and as a
    fraction of the step for signals settling to zero.

    Returns the settling time, or the window length if the last sample is
    outside the band (``strict=True`` raises :class:`NeverSettles` instead).
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    end_time = t[-1] if end_time is None else end_time
    sel = (t >= event_time - 1e-9) & (t <= end_time + 1e-9)
    if not np.any(sel):
        raise ValueError("event outside the trace")
    tw, yw = t[sel], y[sel]
    n_tail = max(1, int(round(tail * len(yw))))
    final = float(np.mean(yw[-n_tail:]))
    if reference is None:
        reference = max(abs(final), abs(yw[0] - final))
    half = band * reference
    outside = np.abs(yw - final) > half
    if not np.any(outside):
        return 0.0
    last_out = int(np.flatnonzero(outside)[-1])
    if last_out == len(tw) - 1:
        if strict:
            raise NeverSettles("signal still outside the band at the end of the window")
        return float(tw[-1] - event_time)
    return float(tw[last_out + 1] - event_time)


def steady_mask(trace: SimTrace, slope=STEADY_SLOPE, window=STEADY_WINDOW):
    """Samples whose trailing ``window`` has ``|dV_o/dt| < slope`` and an
    unchanged load throughout."""
    t, v = trace.t, trace.v_o
    if len(t) < 2:
        return np.zeros(len(t), dtype=bool)
    rate = np.abs(np.diff(v) / np.diff(t))
    load_moved = np.any(np.diff(trace.d, axis=0) != 0, axis=1)
    fast = np.concatenate([[True], (rate >= slope) | load_moved])
    dt = float(t[1] - t[0])
    w = max(1, int(round(window / dt)))
    # steady at k if no fast interval in (k-w, k]
    bad = np.convolve(fast.astype(int), np.ones(w, dtype=int))[:len(t)] > 0
    mask = ~bad
    mask[:w] = False
    return mask


@dataclass
class MetricsReport:
    label: str
    controller: str
    mape_voltage: float
    max_deviation: float
    settling: dict           # event time -> s (2 % band)
    settling_tight: dict     # event time -> s (0.2 % band)
    power_settling: dict     # event time -> s, slowest unit power
    power_balance: float     # max steady residual, % of load
    n_steady: int
    sc_duty: dict            # segment start -> mean |P_SC| over tail, % of load
    sc_time_to_zero: dict    # event time -> s
    slack_zero_fraction: float
    slack_max: float
    solve_ms_mean: float
    solve_ms_max: float
    degraded_steps: int
    aborted: str = ""

    def to_dict(self):
        out = asdict(self)
        for key in ("settling", "settling_tight", "power_settling", "sc_duty",
                    "sc_time_to_zero"):
            out[key] = {f"{k:g}": v for k, v in out[key].items()}
        return out


def _event_windows(scenario: ScenarioConfig, trace: SimTrace):
    end = float(trace.t[-1])
    events = [e for e in scenario.profile.events() if 0 < e < end]
    bounds = events + [end]
    return [(e, bounds[i + 1]) for i, e in enumerate(events)]


def sc_power(trace: SimTrace):
    topo = trace.topo
    return trace.powers[:, topo.n_gen:].sum(axis=1)


def slack_zero_fraction(trace: SimTrace, scenario: ScenarioConfig, guard=0.2):
    """Fraction of controlled samples with ``eps <= 1e-6``, excluding
    ``guard`` seconds after every pulse edge (and the final, uncontrolled
    row)."""
    t = trace.t[:-1]
    keep = np.ones(len(t), dtype=bool)
    for e in scenario.profile.events():
        keep &= ~((t >= e - guard) & (t <= e + guard))
    if not np.any(keep):
        return 1.0
    return float(np.mean(trace.eps[:-1][keep] <= EPS_ZERO))


def metrics(trace: SimTrace, scenario: ScenarioConfig) -> MetricsReport:
    topo = trace.topo
    v_ref = None
    t, v = trace.t, trace.v_o
    # desired value is the nominal bus voltage
    from .model import default_params  # local: avoid import cycle at module load
    v_ref = getattr(scenario, "v_ref", None) or default_params()[0].v_ref
    desired = np.full_like(v, v_ref)
    load = trace.d.sum(axis=1)
    p_units = trace.powers
    p_sc = sc_power(trace)

    settle, settle_tight, p_settle, sc_zero = {}, {}, {}, {}
    for e, end in _event_windows(scenario, trace):
        settle[e] = settling_time(t, v, e, SETTLING_BAND, end)
        settle_tight[e] = settling_time(t, v, e, 0.002, end, reference=v_ref)
        sel = (t >= e) & (t <= end)
        scale = float(np.mean(load[sel])) if np.any(sel) else 1.0
        p_settle[e] = max(settling_time(t, p_units[:, i], e, SETTLING_BAND, end,
                                        reference=scale) for i in range(topo.n_units))
        # SC power back inside 0.5 % of load, for good
        sc_zero[e] = settling_time(t, p_sc, e, 0.005, end, reference=scale)

    steady = steady_mask(trace)
    with np.errstate(invalid="ignore", divide="ignore"):
        resid = np.abs(v * trace.x[:, topo.currents].sum(axis=1) - load) / load * 100
    bal = float(np.max(resid[steady])) if np.any(steady) else 0.0

    duty = {}
    for s, e in scenario.segments():
        if e > t[-1] + 1e-9:
            continue
        sel = (t >= e - SC_TAIL - 1e-9) & (t < e - 1e-9)
        if np.any(sel):
            duty[s] = float(np.mean(np.abs(p_sc[sel])) / np.mean(load[sel]) * 100)

    ctrl = slice(0, len(t) - 1) if len(t) > 1 else slice(0, len(t))
    return MetricsReport(
        label=trace.label, controller=trace.controller,
        mape_voltage=mape(desired, v),
        max_deviation=float(np.max(np.abs(v - v_ref)) / v_ref * 100),
        settling=settle, settling_tight=settle_tight, power_settling=p_settle,
        power_balance=bal, n_steady=int(np.sum(steady)),
        sc_duty=duty, sc_time_to_zero=sc_zero,
        slack_zero_fraction=slack_zero_fraction(trace, scenario),
        slack_max=float(np.max(trace.eps)) if len(trace.eps) else 0.0,
        solve_ms_mean=float(np.mean(trace.solve_ms[ctrl])),
        solve_ms_max=float(np.max(trace.solve_ms[ctrl])),
        degraded_steps=int(np.sum(trace.degraded)) if trace.degraded is not None else 0,
        aborted=trace.aborted,
    )


def compare(trace_a: SimTrace, trace_b: SimTrace, scenario: ScenarioConfig):
    """Metrics of both runs and their differences ``a - b``.

    Raises
    ------
    ScenarioMismatch
        If the traces come from different scenarios, seeds or grids.
    """
    if (trace_a.label != trace_b.label or trace_a.seed != trace_b.seed
            or len(trace_a) != len(trace_b) or not np.allclose(trace_a.t, trace_b.t)):
        raise ScenarioMismatch("traces were not produced by the same scenario and seed")
    ra, rb = metrics(trace_a, scenario), metrics(trace_b, scenario)
    deltas = {
        "mape_voltage": ra.mape_voltage - rb.mape_voltage,
        "max_deviation": ra.max_deviation - rb.max_deviation,
        "settling": {k: ra.settling[k] - rb.settling[k] for k in ra.settling},
        "settling_tight": {k: ra.settling_tight[k] - rb.settling_tight[k]
                           for k in ra.settling_tight},
        "power_settling": {k: ra.power_settling[k] - rb.power_settling[k]
                           for k in ra.power_settling},
    }
    ratios = {
        "mape_voltage": _ratio(ra.mape_voltage, rb.mape_voltage),
        "settling_tight": {k: _ratio(ra.settling_tight[k], rb.settling_tight[k])
                           for k in ra.settling_tight},
        "power_settling": {k: _ratio(ra.power_settling[k], rb.power_settling[k])
                           for k in ra.power_settling},
    }
    return {"a": ra, "b": rb, "deltas": deltas, "ratios": ratios}


def _ratio(a, b):
    if b == 0:
        return 1.0 if a == 0 else float("inf")
    return a / b


# ---------------------------------------------------------------- exports

def _fmt(v):
    return repr(float(v))


def trace_to_csv(trace: SimTrace, include_timing=True):
    cols = trace.columns()
    table = trace.table()
    if not include_timing:
        cols = cols[:-1]
        table = table[:, :-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in table:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(trace: SimTrace, path, include_timing=True):
    Path(path).write_text(trace_to_csv(trace, include_timing))


def read_csv(path, topo: Topology):
    """Parse a trace CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else \
        np.zeros((0, len(header)))
    col = {name: i for i, name in enumerate(header)}
    labels = topo.unit_labels()
    cur = [col[f"i_{u}"] for u in labels]
    vc = [col[f"v_c_sc{i + 1}"] for i in range(topo.n_sc)]
    x = np.column_stack([data[:, col["v_o"]], data[:, cur], data[:, vc]]) if body else \
        np.zeros((0, topo.n_x))
    n = len(body)
    return SimTrace(topo=topo, t=data[:, col["t"]], x=x, u=data[:, col["delta_v"]],
                    d=data[:, [col["p_cpl"], col["p_ppl"]]], eps=data[:, col["eps"]],
                    solve_ms=data[:, col["solve_ms"]] if "solve_ms" in col else np.zeros(n),
                    iterations=np.zeros(n, dtype=int), degraded=np.zeros(n, dtype=bool))


def trace_to_dict(trace: SimTrace):
    return {
        "label": trace.label, "controller": trace.controller, "seed": trace.seed,
        "aborted": trace.aborted,
        "topology": asdict(trace.topo),
        "columns": trace.columns(),
        "state_labels": trace.topo.state_labels(),
        "t": trace.t.tolist(), "x": trace.x.tolist(), "u": trace.u.tolist(),
        "d": trace.d.tolist(), "eps": trace.eps.tolist(), "solve_ms": trace.solve_ms.tolist(),
        "status": list(trace.status),
        "iterations": trace.iterations.tolist() if trace.iterations is not None else [],
        "degraded": trace.degraded.tolist() if trace.degraded is not None else [],
    }


def write_json(obj, path):
    if isinstance(obj, SimTrace):
        payload = trace_to_dict(obj)
    elif isinstance(obj, MetricsReport):
        payload = obj.to_dict()
    else:
        payload = obj
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, MetricsReport):
        return o.to_dict()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o)}")


def write_svg(traces, path, v_ref=6000.0, v_band=0.05):
    """Bus voltage and per-unit power plots of one or more traces."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(traces, SimTrace):
        traces = [traces]
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for tr in traces:
        axes[0].plot(tr.t, tr.v_o / 1e3, label=tr.controller or tr.label)
    axes[0].axhline((1 + v_band) * v_ref / 1e3, color="0.6", ls="--", lw=0.8)
    axes[0].axhline((1 - v_band) * v_ref / 1e3, color="0.6", ls="--", lw=0.8)
    axes[0].set_ylabel("V_o (kV)")
    axes[0].legend(loc="lower right")
    styles = ["-", "--", ":", "-."]
    for k, tr in enumerate(traces):
        for i, name in enumerate(tr.topo.unit_labels()):
            axes[1].plot(tr.t, tr.powers[:, i] / 1e6, ls=styles[k % len(styles)],
                         color=f"C{i}", label=f"{name} ({tr.controller})" if k == 0 or len(traces) > 1 else None)
    axes[1].set_ylabel("P (MW)")
    axes[1].set_xlabel("t (s)")
    axes[1].legend(ncol=3, fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

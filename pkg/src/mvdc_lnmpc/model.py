"""Reduced-order MVDC shipboard network with droop-controlled sources.

The bus capacitor is fed by synchronous generators and batteries behind a
virtual (droop) resistance, and by supercapacitors behind a virtual
capacitance, and loaded by constant-power and pulsed-power loads::

    C_eq dV_o/dt   = sum(I) - (P_cpl + P_ppl) / V_o
    L_i dI_i/dt    = V_ref - R_i I_i - V_o + dV          (generators, batteries)
    L_i dI_i/dt    = V_ref - R_i I_i - V_Ci - V_o        (supercapacitors)
    C_i dV_Ci/dt   = I_i                                 (supercapacitors)

States are flat float arrays ordered ``[v_o, i_sg..., i_b..., i_sc...,
v_c_sc...]``; the control input is the scalar restoration signal ``dV`` and
the disturbance is ``[p_cpl, p_ppl]`` in watts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _backend
from .errors import NoConvergence, VoltageFloorViolation

__all__ = [
    "Topology",
    "PlantParams",
    "State",
    "BoxBounds",
    "Plant",
    "derivatives",
    "step",
    "unit_powers",
    "find_equilibrium",
    "restoration_equilibrium",
    "jacobian_analytic",
    "default_params",
    "load_params",
]


@dataclass(frozen=True)
class Topology:
    n_sg: int = 2
    n_b: int = 2
    n_sc: int = 2

    def __post_init__(self):
        if min(self.n_sg, self.n_b, self.n_sc) < 1:
            raise ValueError("every unit count must be >= 1")

    @property
    def n_gen(self):
        """Units with resistive droop (generators and batteries)."""
        return self.n_sg + self.n_b

    @property
    def n_units(self):
        return self.n_sg + self.n_b + self.n_sc

    @property
    def n_x(self):
        return 1 + self.n_sg + self.n_b + 2 * self.n_sc

    @property
    def i_sg(self):
        return slice(1, 1 + self.n_sg)

    @property
    def i_b(self):
        return slice(1 + self.n_sg, 1 + self.n_gen)

    @property
    def i_gen(self):
        return slice(1, 1 + self.n_gen)

    @property
    def i_sc(self):
        return slice(1 + self.n_gen, 1 + self.n_units)

    @property
    def currents(self):
        return slice(1, 1 + self.n_units)

    @property
    def v_c(self):
        return slice(1 + self.n_units, self.n_x)

    def unit_labels(self):
        return ([f"sg{i + 1}" for i in range(self.n_sg)]
                + [f"b{i + 1}" for i in range(self.n_b)]
                + [f"sc{i + 1}" for i in range(self.n_sc)])

    def state_labels(self):
        units = self.unit_labels()
        return (["v_o"] + [f"i_{u}" for u in units]
                + [f"v_c_sc{i + 1}" for i in range(self.n_sc)])


@dataclass(frozen=True)
class PlantParams:
    """Physical and droop parameters of the network.

    Only ``v_ref``, ``v_band`` and the sampling period are taken from the
    published case study; every other default is a configuration value
    chosen so the open loop is stable and 15 MW of load is feasible.

    Attributes
    ----------
    c_eq : float
        Equivalent bus capacitance (F).
    l : tuple of float
        Inductance of every unit (H), ordered sg, b, sc.
    r : tuple of float
        Resistive droop gain (ohm) of every generator and battery.
    c_sc, r_sc : tuple of float
        Capacitive droop gain (F) and series resistance (ohm) of every
        supercapacitor branch.
    v_ref : float
        Nominal bus voltage (V).
    v_band : float
        Permissible relative bus-voltage deviation.
    p_max : tuple of float
        Power limit per unit (W), ordered sg, b, sc.
    v_floor_frac : float
        Guard for the ``P / V_o`` terms, as a fraction of ``v_ref``.
    """

    c_eq: float = 0.01
    l: tuple = (1e-3,) * 6
    r: tuple = (0.3, 0.35, 0.5, 0.7)
    c_sc: tuple = (0.05, 0.05)
    r_sc: tuple = (1.0, 1.0)
    v_ref: float = 6000.0
    v_band: float = 0.05
    p_max: tuple = (8e6, 6e6, 4e6, 3e6, 3e6, 3e6)
    v_floor_frac: float = 0.1

    def __post_init__(self):
        for name in ("l", "r", "c_sc", "r_sc", "p_max"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        positive = [self.c_eq, *self.l, *self.r, *self.c_sc, *self.r_sc, *self.p_max]
        if min(positive) <= 0:
            raise ValueError("capacitances, inductances, resistances and limits must be > 0")
        if self.v_ref <= 0:
            raise ValueError("v_ref must be > 0")
        if not 0 < self.v_band < 1:
            raise ValueError("v_band must lie in (0, 1)")

    @property
    def v_floor(self):
        return self.v_floor_frac * self.v_ref

    def check(self, topo: Topology):
        n = {"l": topo.n_units, "r": topo.n_gen, "c_sc": topo.n_sc,
             "r_sc": topo.n_sc, "p_max": topo.n_units}
        for name, size in n.items():
            if len(getattr(self, name)) != size:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, "
                                 f"topology needs {size}")

    def scaled(self, **factors):
        """Copy with multiplicative mismatch, e.g. ``scaled(c_eq=1.1, l=0.9)``."""
        changes = {}
        for name, f in factors.items():
            cur = getattr(self, name)
            if isinstance(cur, tuple):
                changes[name] = tuple(v * f for v in cur)
            else:
                changes[name] = cur * f
        return dataclasses.replace(self, **changes)

    def kernel_vector(self):
        """Flat parameter vector in the layout used by the kernels."""
        r_all = list(self.r) + list(self.r_sc)
        return np.array([self.c_eq, self.v_ref, self.v_floor,
                         *(1.0 / np.array(self.l)), *r_all,
                         *(1.0 / np.array(self.c_sc))], dtype=float)

    def to_dict(self, topo: Topology | None = None):
        out = dataclasses.asdict(self)
        out = {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}
        if topo is not None:
            out = {**dataclasses.asdict(topo), **out}
        return out


def default_params():
    """Packaged default ``(PlantParams, Topology)``."""
    text = resources.files("mvdc_lnmpc.data").joinpath("default_params.json").read_text()
    return _from_dict(json.loads(text))


def load_params(path):
    """Read ``(PlantParams, Topology)`` from a JSON file.

    Keys mirror the dataclass field names; missing keys take the defaults.
    """
    return _from_dict(json.loads(Path(path).read_text()))


def _from_dict(raw):
    topo_keys = {f.name for f in dataclasses.fields(Topology)}
    param_keys = {f.name for f in dataclasses.fields(PlantParams)}
    unknown = set(raw) - topo_keys - param_keys - {"comment"}
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    topo = Topology(**{k: int(v) for k, v in raw.items() if k in topo_keys})
    params = PlantParams(**{k: v for k, v in raw.items() if k in param_keys})
    params.check(topo)
    return params, topo


@dataclass
class State:
    v_o: float
    i_sg: np.ndarray
    i_b: np.ndarray
    i_sc: np.ndarray
    v_c_sc: np.ndarray

    def to_vector(self):
        return np.concatenate([[self.v_o], self.i_sg, self.i_b, self.i_sc, self.v_c_sc])

    @classmethod
    def from_vector(cls, x, topo: Topology):
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), x[topo.i_sg].copy(), x[topo.i_b].copy(),
                   x[topo.i_sc].copy(), x[topo.v_c].copy())


@dataclass
class BoxBounds:
    """Axis-aligned state and input bounds; infinite entries are unbounded."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-np.inf]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([np.inf]))

    def __post_init__(self):
        self.x_lo, self.x_hi = np.asarray(self.x_lo, float), np.asarray(self.x_hi, float)
        self.u_lo, self.u_hi = np.atleast_1d(np.asarray(self.u_lo, float)), \
            np.atleast_1d(np.asarray(self.u_hi, float))
        if np.any(self.x_lo > self.x_hi) or np.any(self.u_lo > self.u_hi):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def from_params(cls, params: PlantParams, topo: Topology, u_frac=0.1):
        """Voltage band, per-unit current limits ``p_max / v_ref`` and a
        symmetric input box of ``u_frac * v_ref``."""
        n_x = topo.n_x
        lo, hi = np.full(n_x, -np.inf), np.full(n_x, np.inf)
        lo[0] = (1 - params.v_band) * params.v_ref
        hi[0] = (1 + params.v_band) * params.v_ref
        i_max = np.array(params.p_max) / params.v_ref
        lo[topo.currents], hi[topo.currents] = -i_max, i_max
        u_max = u_frac * params.v_ref
        return cls(lo, hi, [-u_max], [u_max])

    @classmethod
    def unbounded(cls, n_x):
        return cls(np.full(n_x, -np.inf), np.full(n_x, np.inf))

    def state_violation(self, x):
        """Largest bound excess of ``x`` (any leading shape), or 0."""
        x = np.asarray(x, float)
        with np.errstate(invalid="ignore"):
            excess = np.maximum(x - self.x_hi, self.x_lo - x)
        return max(0.0, float(np.max(excess)))


def derivatives(params: PlantParams, topo: Topology, x, u, d, kernels=None):
    """Time derivative of the state.

    Raises
    ------
    VoltageFloorViolation
        If ``v_o`` is below ``params.v_floor``.
    """
    k = kernels or _backend.kernels
    return k.derivatives(params.kernel_vector(), topo.n_gen, topo.n_sc,
                         np.ascontiguousarray(x, dtype=float), float(np.squeeze(u)),
                         np.ascontiguousarray(d, dtype=float))


def step(params: PlantParams, topo: Topology, x, u, d, dt=5e-3, substeps=10, kernels=None):
    """Advance one sampling period with ``u`` and ``d`` held (zero-order hold),
    using ``substeps`` classical RK4 steps."""
    if dt <= 0 or substeps < 1:
        raise ValueError("dt must be > 0 and substeps >= 1")
    k = kernels or _backend.kernels
    return k.rk4_step(params.kernel_vector(), topo.n_gen, topo.n_sc,
                      np.ascontiguousarray(x, dtype=float), float(np.squeeze(u)),
                      np.ascontiguousarray(d, dtype=float), float(dt), int(substeps))


def unit_powers(x, topo: Topology):
    """Output power ``V_o * I_i`` of every unit (W), ordered sg, b, sc."""
    x = np.asarray(x, dtype=float)
    return x[..., :1] * x[..., topo.currents]


def jacobian_analytic(params: PlantParams, topo: Topology, x, u, d):
    """Closed-form partial derivatives ``(A, B)`` of the dynamics."""
    x = np.asarray(x, dtype=float)
    v = x[0]
    if v < params.v_floor:
        raise VoltageFloorViolation(v, params.v_floor)
    load = float(d[0] + d[1])
    n = topo.n_x
    a = np.zeros((n, n))
    b = np.zeros((n, 1))
    a[0, 0] = load / (params.c_eq * v * v)
    a[0, topo.currents] = 1.0 / params.c_eq
    inv_l = 1.0 / np.array(params.l)
    for i in range(topo.n_gen):
        row = 1 + i
        a[row, 0] = -inv_l[i]
        a[row, row] = -params.r[i] * inv_l[i]
        b[row, 0] = inv_l[i]
    for s in range(topo.n_sc):
        row = 1 + topo.n_gen + s
        vc = 1 + topo.n_units + s
        li = inv_l[topo.n_gen + s]
        a[row, 0] = -li
        a[row, row] = -params.r_sc[s] * li
        a[row, vc] = -li
        a[vc, row] = 1.0 / params.c_sc[s]
    return a, b


def find_equilibrium(params: PlantParams, topo: Topology, d, u_fixed=0.0,
                     x_guess=None, max_iter=100):
    """Equilibrium state for load ``d`` under a constant restoration input.

    Damped Newton iteration on the flattened residual, starting from the
    zero-load equilibrium unless ``x_guess`` is given.

    Raises
    ------
    NoConvergence
        If the residual does not fall below ``1e-8 * v_ref`` (typically an
        infeasible load).
    """
    u = float(np.squeeze(u_fixed))
    x = np.zeros(topo.n_x) if x_guess is None else np.array(x_guess, dtype=float)
    if x_guess is None:
        x[0] = params.v_ref
    tol = 1e-8 * params.v_ref

    def resid(z):
        try:
            return derivatives(params, topo, z, u, d)
        except VoltageFloorViolation:
            return None

    f = resid(x)
    if f is None:
        raise NoConvergence("initial guess violates the voltage floor")
    for _ in range(max_iter):
        if np.max(np.abs(f)) <= tol:
            x[topo.i_sc] = 0.0  # exact at any equilibrium: C dV_C/dt = I
            return x
        a, _ = jacobian_analytic(params, topo, x, u, d)
        dx = np.linalg.solve(a, -f)
        t = 1.0
        norm0 = np.linalg.norm(f)
        while t > 1e-6:
            trial = x + t * dx
            ft = resid(trial)
            if ft is not None and np.linalg.norm(ft) < (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            raise NoConvergence("line search failed; load likely infeasible")
        x, f = trial, ft
    raise NoConvergence(f"no equilibrium within {max_iter} Newton iterations")


def restoration_equilibrium(params: PlantParams, topo: Topology, d):
    """Equilibrium with the bus restored to ``v_ref`` and the input that holds it.

    At ``V_o = V_ref`` each droop unit carries ``dV / R_i`` and the
    supercapacitors carry nothing, so ``dV = P / (V_ref * sum(1/R_i))``.
    """
    load = float(d[0] + d[1])
    g = 1.0 / np.array(params.r)
    u = load / (params.v_ref * g.sum())
    x = np.zeros(topo.n_x)
    x[0] = params.v_ref
    x[topo.i_gen] = u * g
    return x, u


class Plant:
    """Parameters, topology, sampling period and kernel backend bundled
    for repeated stepping."""

    def __init__(self, params: PlantParams, topo: Topology, dt=5e-3, substeps=10,
                 backend=None):
        params.check(topo)
        self.params = params
        self.topo = topo
        self.dt = float(dt)
        self.substeps = int(substeps)
        self.kernels = _backend.get_kernels(backend)
        self._pvec = params.kernel_vector()

    @property
    def n_x(self):
        return self.topo.n_x

    def derivatives(self, x, u, d):
        return self.kernels.derivatives(self._pvec, self.topo.n_gen, self.topo.n_sc,
                                        np.ascontiguousarray(x, dtype=float), float(u),
                                        np.ascontiguousarray(d, dtype=float))

    def step(self, x, u, d):
        return self.kernels.rk4_step(self._pvec, self.topo.n_gen, self.topo.n_sc,
                                     np.ascontiguousarray(x, dtype=float), float(u),
                                     np.ascontiguousarray(d, dtype=float),
                                     self.dt, self.substeps)

    def rollout(self, x0, u_seq, d_seq):
        return self.kernels.rollout(self._pvec, self.topo.n_gen, self.topo.n_sc,
                                    np.ascontiguousarray(x0, dtype=float),
                                    np.ascontiguousarray(u_seq, dtype=float),
                                    np.ascontiguousarray(d_seq, dtype=float),
                                    self.dt, self.substeps)

    def rollout_batch(self, x0, u_seqs, d_seq):
        return self.kernels.rollout_batch(self._pvec, self.topo.n_gen, self.topo.n_sc,
                                          np.ascontiguousarray(x0, dtype=float),
                                          np.ascontiguousarray(u_seqs, dtype=float),
                                          np.ascontiguousarray(d_seq, dtype=float),
                                          self.dt, self.substeps)

"""Nonlinear MPC with a Lyapunov terminal cost and a soft terminal set.

Offline, the plant is linearised at the voltage-restored equilibrium of a
nominal load, a DLQR gain ``K`` is computed from the stage weights and the
terminal weight ``W_P`` solves the discrete Lyapunov equation of
``A_d + B_d K`` with ``Q = W_x + K' W_du K``. The terminal set is the level
set ``{x : (x - x_ref)' W_P (x - x_ref) <= alpha}`` with ``alpha`` certified
by sampling.

Online, each sampling instant solves, by single shooting over
``z = [u_0 ... u_{N-1}, eps]``::

    min  sum_j |x_j - x_ref|^2_Wx + |du_j|^2_Wdu + |x_N - x_ref|^2_WP + rho eps^2
    s.t. x_{j+1} = f_d(x_j, u_j, d),  x_0 = x_meas
         u_lo <= u_j <= u_hi
         state-bound excess / width <= eps       (j = 1..N)
         V(x_N) - alpha <= eps,  eps >= 0

and applies ``u_0``.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels_py, lintools
from .errors import (AlphaDegenerate, InfeasibleQp, MvdcError, NonFiniteEvaluation,
                     VoltageFloorViolation)
from .model import (BoxBounds, Plant, PlantParams, Topology, find_equilibrium,
                    restoration_equilibrium)
from .nlp import CONVERGED, INFEASIBLE, NlpOptions, NlpProblem, solve_sqp

FLOOR_PENALTY = 1e6  # residual size when a rollout hits the voltage floor


@dataclass
class OcpConfig:
    """Horizon, weights, bounds and solver settings of the online problem.

    ``x_ref=None`` tracks the voltage-restored equilibrium of the measured
    load, recomputed every step. ``input_penalty="rate"`` weights
    ``u_j - u_{j-1}``; ``"level"`` weights ``u_j - u_ref`` instead, which
    makes the problem the finite-horizon truncation of the DLQR cost.
    """

    n_p: int = 10
    dt: float = 5e-3
    substeps: int = 10
    w_x: np.ndarray = None
    w_du: np.ndarray = None
    rho_eps: float = 1e4
    x_ref: np.ndarray | None = None
    bounds: BoxBounds | None = None
    input_penalty: str = "rate"
    lyapunov_form: str = "standard"
    terminal_constraint: bool = True
    state_constraints: bool = True
    alpha_samples: int = 2000
    seed: int = 0
    max_iterations: int = 30
    kkt_tolerance: float = 1e-6
    fd_step: float = 0.05
    preview: str = "held"

    def __post_init__(self):
        if self.n_p < 1:
            raise ValueError("n_p must be >= 1")
        if self.rho_eps <= 0:
            raise ValueError("rho_eps must be > 0")
        if self.input_penalty not in ("rate", "level"):
            raise ValueError("input_penalty must be 'rate' or 'level'")
        if self.preview not in ("held", "scenario"):
            raise ValueError("preview must be 'held' or 'scenario'")
        if self.w_x is not None:
            self.w_x = np.atleast_2d(np.asarray(self.w_x, float))
            if not lintools.is_positive_definite(self.w_x):
                raise ValueError("w_x must be positive definite")
        if self.w_du is not None:
            self.w_du = np.atleast_2d(np.asarray(self.w_du, float))
            if not lintools.is_positive_definite(self.w_du):
                raise ValueError("w_du must be positive definite")


def _controller_defaults():
    text = resources.files("mvdc_lnmpc.data").joinpath("default_controller.json").read_text()
    return json.loads(text)


def load_controller_config(path=None):
    """Raw controller configuration (LNMPC and PI sections) as a dict.

    Keys absent from ``path`` take the packaged defaults.
    """
    raw = _controller_defaults()
    if path is not None:
        user = json.loads(Path(path).read_text())
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(raw.get(key), dict):
                raw[key] = {**raw[key], **val}
            else:
                raw[key] = val
    return raw


def ocp_config_from_dict(raw, params: PlantParams, topo: Topology):
    """Build an :class:`OcpConfig` from the ``lnmpc`` section of a config.

    State weights are given per state in ``w_x_diag`` and multiplied by
    ``1 / scale**2`` where ``scale`` is ``v_scale * v_ref`` for voltages and
    ``i_scale`` amperes for currents, so the numbers stay order one.
    """
    sec = dict(raw.get("lnmpc", raw))
    v_scale = sec.pop("v_scale", 0.01) * params.v_ref
    i_scale = sec.pop("i_scale", 100.0)
    diag = np.asarray(sec.pop("w_x_diag"), float)
    if diag.size != topo.n_x:
        raise ValueError(f"w_x_diag needs {topo.n_x} entries")
    scale = np.empty(topo.n_x)
    scale[0] = v_scale
    scale[topo.currents] = i_scale
    scale[topo.v_c] = v_scale
    w_x = np.diag(diag / scale ** 2)
    w_du = np.atleast_2d(sec.pop("w_du", 1.0)) / v_scale ** 2
    u_frac = sec.pop("u_frac", 0.1)
    x_ref = sec.pop("x_ref", None)
    fields_ = {f.name for f in dataclasses.fields(OcpConfig)}
    unknown = set(sec) - fields_
    if unknown:
        raise ValueError(f"unknown controller keys: {sorted(unknown)}")
    return OcpConfig(w_x=w_x, w_du=w_du, bounds=BoxBounds.from_params(params, topo, u_frac),
                     x_ref=None if x_ref is None else np.asarray(x_ref, float), **sec)


def default_ocp_config(params: PlantParams, topo: Topology, **overrides):
    cfg = ocp_config_from_dict(_controller_defaults(), params, topo)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@dataclass
class TerminalIngredients:
    k_gain: np.ndarray
    w_p: np.ndarray
    alpha: float
    x_e: np.ndarray
    u_e: float
    a_d: np.ndarray
    b_d: np.ndarray
    lyapunov_form: str = "standard"
    q_star: np.ndarray = None

    @property
    def closed_loop(self):
        return self.a_d + self.b_d @ self.k_gain

    def linearized_model(self, dt):
        return lintools.LinearizedModel(self.a_d, self.b_d, self.x_e, self.u_e, dt)


def build_terminal_ingredients(params: PlantParams, topo: Topology, cfg: OcpConfig,
                               d_nominal, alpha=None):
    """Offline synthesis: equilibrium, linearisation, DLQR, Lyapunov, level set.

    ``alpha`` overrides the sampled terminal level (``np.inf`` disables the
    terminal set).

    Raises
    ------
    AlphaDegenerate
        If no positive level passes the sampled invariance test.
    """
    d_nominal = np.asarray(d_nominal, float)
    _, u_e = restoration_equilibrium(params, topo, d_nominal)
    x_e = find_equilibrium(params, topo, d_nominal, u_e)
    a, b = lintools.jacobian(params, topo, x_e, u_e, d_nominal)
    a_d, b_d = lintools.discretize(a, b, cfg.dt)
    k = lintools.dlqr(a_d, b_d, cfg.w_x, cfg.w_du)
    a_cl = a_d + b_d @ k
    q_star = cfg.w_x + k.T @ cfg.w_du @ k
    w_p = lintools.dlyap(a_cl, q_star, form=cfg.lyapunov_form)
    ti = TerminalIngredients(k, w_p, np.inf, x_e, float(u_e), a_d, b_d,
                             cfg.lyapunov_form, q_star)
    if alpha is None:
        bounds = cfg.bounds or BoxBounds.unbounded(topo.n_x)
        alpha = terminal_level(params, topo, ti, bounds, d_nominal, cfg.dt, cfg.substeps,
                               cfg.alpha_samples, cfg.seed)
    ti.alpha = float(alpha)
    return ti


def boundary_samples(w_p, level, n_samples, seed):
    """Deviations on the ellipsoid ``dx' W_P dx = level`` (seeded)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n_samples, w_p.shape[0]))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    chol = np.linalg.cholesky(w_p)
    # dx = L^-T w  =>  dx' L L' dx = |w|^2 = 1
    dx = np.linalg.solve(chol.T, w.T).T
    return dx * np.sqrt(level)


def level_set_check(params, topo, ti, bounds, d, dt, substeps, level, n_samples, seed):
    """Sampled invariance test of one level.

    Returns a boolean per boundary sample: the sample and its local-feedback
    input satisfy the bounds, and one nonlinear closed-loop step lands
    inside the same level set.
    """
    dx = boundary_samples(ti.w_p, level, n_samples, seed)
    x = ti.x_e + dx
    u = ti.u_e + dx @ ti.k_gain[0]
    ok = np.all((x >= bounds.x_lo) & (x <= bounds.x_hi), axis=1)
    ok &= (u >= bounds.u_lo[0]) & (u <= bounds.u_hi[0])
    ok &= x[:, 0] >= params.v_floor
    load = np.full(n_samples, float(d[0] + d[1]))
    nxt = _kernels_py._rk4(params.kernel_vector(), topo.n_gen, topo.n_sc,
                           x[ok], u[ok], load[ok], dt, substeps)
    if nxt is None:
        return np.zeros(n_samples, dtype=bool)
    dn = nxt - ti.x_e
    v_next = np.einsum("ij,jk,ik->i", dn, ti.w_p, dn)
    inside = np.zeros(n_samples, dtype=bool)
    inside[np.flatnonzero(ok)] = v_next <= level
    return inside


def terminal_level(params, topo, ti, bounds, d, dt, substeps, n_samples=2000, seed=0,
                   lo=1e-12, hi=1e12, bisections=50):
    """Largest level passing :func:`level_set_check`, by log-space bisection.

    Raises
    ------
    AlphaDegenerate
        If even ``lo`` fails.
    """
    def passes(c):
        return bool(np.all(level_set_check(params, topo, ti, bounds, d, dt, substeps,
                                           c, n_samples, seed)))

    c = 1.0
    if passes(c):
        good, bad = c, None
        while good < hi:
            if passes(good * 10):
                good *= 10
            else:
                bad = good * 10
                break
        if bad is None:
            return good
    else:
        bad, good = c, None
        while bad > lo:
            if passes(bad / 10):
                good = bad / 10
                break
            bad /= 10
        if good is None:
            raise AlphaDegenerate("no positive terminal level passed the sampled check")
    lg, lb = np.log10(good), np.log10(bad)
    for _ in range(bisections):
        mid = 0.5 * (lg + lb)
        if passes(10 ** mid):
            lg = mid
        else:
            lb = mid
    return float(10 ** lg)


def rollout(model, x0, u_seq, d_preview):
    """Prediction over the horizon: ``len(u_seq) + 1`` states.

    ``model`` is a :class:`~mvdc_lnmpc.model.Plant` or a
    :class:`~mvdc_lnmpc.lintools.LinearizedModel`. Floor violations are
    raised, unlike inside the optimiser where they become a penalty.
    """
    traj, ok = model.rollout(np.asarray(x0, float), np.asarray(u_seq, float),
                             np.asarray(d_preview, float).reshape(len(u_seq), 2))
    if not ok:
        bad = traj[-1, 0]
        raise VoltageFloorViolation(bad, getattr(getattr(model, "params", None),
                                                 "v_floor", float("nan")))
    return traj


def ocp_cost(traj, u_seq, u_prev, eps, cfg: OcpConfig, ti: TerminalIngredients,
             x_ref=None, u_ref=None):
    """Stage, terminal and slack cost of one predicted trajectory."""
    traj = np.asarray(traj, float)
    u_seq = np.asarray(u_seq, float).ravel()
    x_ref = ti.x_e if x_ref is None else np.asarray(x_ref, float)
    u_ref = ti.u_e if u_ref is None else u_ref
    n_p = len(u_seq)
    dev = traj[:n_p] - x_ref
    stage = float(np.einsum("ij,jk,ik->", dev, cfg.w_x, dev))
    if cfg.input_penalty == "rate":
        du = np.diff(np.concatenate([[float(u_prev)], u_seq]))
    else:
        du = u_seq - u_ref
    stage += float(cfg.w_du[0, 0] * du @ du)
    e_n = traj[n_p] - x_ref
    terminal = float(e_n @ ti.w_p @ e_n)
    return stage + terminal + cfg.rho_eps * float(eps) ** 2


def terminal_violation(x_np, ti: TerminalIngredients, x_ref=None):
    """``max(0, V(x_N) - alpha)`` with ``V`` the terminal cost."""
    x_ref = ti.x_e if x_ref is None else np.asarray(x_ref, float)
    e = np.asarray(x_np, float) - x_ref
    return max(0.0, float(e @ ti.w_p @ e) - ti.alpha)


@dataclass
class ControllerState:
    u_prev: float
    warm_start: np.ndarray | None = None


@dataclass
class StepDiagnostics:
    status: str
    iterations: int
    kkt: float
    cost: float
    eps: float
    terminal_violation: float
    state_violation: float
    solve_ms: float
    degraded: bool = False
    message: str = ""
    predicted: np.ndarray = field(default=None, repr=False)
    u_seq: np.ndarray = field(default=None, repr=False)


class _OcpEvaluator:
    """Residuals, constraints and their derivatives for one sampling instant,
    cached on the decision vector so the SQP callbacks share rollouts."""

    def __init__(self, model, cfg: OcpConfig, ti: TerminalIngredients, x0, d_seq,
                 u_prev, x_ref, u_ref):
        self.model, self.cfg, self.ti = model, cfg, ti
        self.x0 = np.asarray(x0, float)
        self.d_seq = np.ascontiguousarray(d_seq, float)
        self.u_prev, self.x_ref, self.u_ref = float(u_prev), x_ref, u_ref
        self.n_p = cfg.n_p
        self.lx = np.linalg.cholesky(cfg.w_x).T
        self.lp = np.linalg.cholesky(ti.w_p).T
        self.sqrt_wdu = float(np.sqrt(cfg.w_du[0, 0]))
        self.sqrt_rho = float(np.sqrt(cfg.rho_eps))
        bounds = cfg.bounds
        self.bound_rows = []
        if cfg.state_constraints and bounds is not None:
            width = bounds.x_hi - bounds.x_lo
            for i in range(len(self.x0)):
                if np.isfinite(bounds.x_hi[i]) and np.isfinite(bounds.x_lo[i]):
                    self.bound_rows.append((i, bounds.x_lo[i], bounds.x_hi[i], width[i]))
        self.use_terminal = cfg.terminal_constraint and np.isfinite(ti.alpha)
        self.root_scale = 1.0  # residual multiplier; the solver sees scale**2 * cost
        self._traj_cache = {}
        self._jac_cache = {}
        # rate/level penalty as an affine map of u: r_du = D u + c
        n = self.n_p
        if cfg.input_penalty == "rate":
            dmat = np.eye(n) - np.eye(n, k=-1)
            cvec = np.zeros(n)
            cvec[0] = -self.u_prev
        else:
            dmat = np.eye(n)
            cvec = np.full(n, -self.u_ref)
        self.du_mat, self.du_off = self.sqrt_wdu * dmat, self.sqrt_wdu * cvec

    def traj(self, z):
        key = z.tobytes()
        hit = self._traj_cache.get(key)
        if hit is None:
            u = np.ascontiguousarray(z[:self.n_p])
            hit = self.model.rollout(self.x0, u, self.d_seq)
            if len(self._traj_cache) > 64:
                self._traj_cache.clear()
            self._traj_cache[key] = hit
        return hit

    def traj_jac(self, z):
        """d(traj[1:])/du by central differences, shape (n_p, n_x, n_p)."""
        key = z.tobytes()
        hit = self._jac_cache.get(key)
        if hit is not None:
            return hit
        n = self.n_p
        h = self.cfg.fd_step
        u = z[:n]
        seqs = np.repeat(u[None, :], 2 * n, axis=0)
        idx = np.arange(n)
        seqs[idx, idx] += h
        seqs[n + idx, idx] -= h
        trajs, _ = self.model.rollout_batch(self.x0, seqs, self.d_seq)
        jac = (trajs[:n, 1:] - trajs[n:, 1:]) / (2 * h)   # (col, step, state)
        jac = np.transpose(jac, (1, 2, 0))
        if len(self._jac_cache) > 8:
            self._jac_cache.clear()
        self._jac_cache[key] = jac
        return jac

    def residuals(self, z):
        traj, ok = self.traj(z)
        n = self.n_p
        r_x = (traj[:n] - self.x_ref) @ self.lx.T
        r_du = self.du_mat @ z[:n] + self.du_off
        r_n = self.lp @ (traj[n] - self.x_ref)
        r_eps = self.sqrt_rho * z[n]
        r = np.concatenate([r_x.ravel(), r_du, r_n, [r_eps, 0.0 if ok else FLOOR_PENALTY]])
        return self.root_scale * r

    def residual_jacobian(self, z):
        n, nx = self.n_p, len(self.x0)
        jt = self.traj_jac(z)
        rows = []
        jx = np.zeros((n, nx, n + 1))
        # step 0 is the measured state, independent of z
        jx[1:, :, :n] = np.einsum("ab,jbc->jac", self.lx, jt[:n - 1])
        rows.append(jx.reshape(n * nx, n + 1))
        rows.append(np.hstack([self.du_mat, np.zeros((n, 1))]))
        jn = np.zeros((nx, n + 1))
        jn[:, :n] = self.lp @ jt[n - 1]
        rows.append(jn)
        last = np.zeros((2, n + 1))
        last[0, n] = self.sqrt_rho
        rows.append(last)
        return self.root_scale * np.vstack(rows)

    def constraints(self, z):
        traj, _ = self.traj(z)
        eps = z[self.n_p]
        out = []
        if self.use_terminal:
            e = traj[self.n_p] - self.x_ref
            out.append(float(e @ self.ti.w_p @ e) - self.ti.alpha - eps)
        for i, lo, hi, width in self.bound_rows:
            col = traj[1:, i]
            out.extend((col - hi) / width - eps)
            out.extend((lo - col) / width - eps)
        return np.asarray(out)

    def constraint_jacobian(self, z):
        n = self.n_p
        jt = self.traj_jac(z)
        traj, _ = self.traj(z)
        rows = []
        if self.use_terminal:
            e = traj[n] - self.x_ref
            row = np.zeros(n + 1)
            row[:n] = 2.0 * (e @ self.ti.w_p) @ jt[n - 1]
            row[n] = -1.0
            rows.append(row[None, :])
        for i, _, _, width in self.bound_rows:
            block = np.zeros((n, n + 1))
            block[:, :n] = jt[:, i, :] / width
            block[:, n] = -1.0
            rows.append(block)
            neg = -block
            neg[:, n] = -1.0
            rows.append(neg)
        return np.vstack(rows) if rows else np.zeros((0, n + 1))

    def objective(self, z):
        r = self.residuals(z)
        return float(r @ r)

    def state_violation(self, traj):
        worst = 0.0
        for i, lo, hi, width in self.bound_rows:
            col = traj[1:, i]
            worst = max(worst, float(np.max((col - hi) / width)), float(np.max((lo - col) / width)))
        return worst


class LNMPC:
    """Receding-horizon controller; one instance per simulation loop.

    Parameters
    ----------
    model : Plant or LinearizedModel
        Prediction model.
    params, topo
        Used to compute the restoration reference for each measured load.
    cfg : OcpConfig
    ti : TerminalIngredients
    """

    name = "lnmpc"

    def __init__(self, model, params: PlantParams, topo: Topology, cfg: OcpConfig,
                 ti: TerminalIngredients):
        self.model = model
        self.params = params
        self.topo = topo
        self.cfg = cfg
        self.ti = ti
        self.state = ControllerState(u_prev=ti.u_e)
        self.nlp_options = NlpOptions(max_iterations=cfg.max_iterations,
                                      kkt_tolerance=cfg.kkt_tolerance)

    @classmethod
    def from_config(cls, params, topo, cfg: OcpConfig, d_nominal, backend=None):
        ti = build_terminal_ingredients(params, topo, cfg, d_nominal)
        model = Plant(params, topo, cfg.dt, cfg.substeps, backend=backend)
        return cls(model, params, topo, cfg, ti)

    def reference(self, d):
        if self.cfg.x_ref is not None:
            return np.asarray(self.cfg.x_ref, float), self.ti.u_e
        return restoration_equilibrium(self.params, self.topo, d)

    def reset(self, x0=None, d0=None, u0=None):
        """Initialise the controller memory (previous input, warm start)."""
        if u0 is None:
            u0 = self.ti.u_e if d0 is None else self.reference(d0)[1]
        self.state = ControllerState(u_prev=float(u0), warm_start=None)

    def _initial_guess(self, x_meas, x_ref, u_ref, d_seq):
        cfg, ti = self.cfg, self.ti
        n = cfg.n_p
        lo, hi = cfg.bounds.u_lo[0] if cfg.bounds else -np.inf, \
            cfg.bounds.u_hi[0] if cfg.bounds else np.inf
        if self.state.warm_start is not None:
            # shift, then append the local feedback law at the predicted state
            u = np.empty(n)
            u[:-1] = self.state.warm_start[1:n]
            x_tail = np.asarray(x_meas, float)
            ok = True
            if n > 1:
                traj, ok = self.model.rollout(x_tail, np.ascontiguousarray(u[:-1]), d_seq[:-1])
                x_tail = traj[-1]
            u[-1] = u_ref + float(ti.k_gain[0] @ (x_tail - x_ref)) if ok else u_ref
        else:
            # local feedback law simulated along the prediction model
            u = np.empty(n)
            x = np.asarray(x_meas, float)
            for j in range(n):
                u[j] = np.clip(u_ref + float(ti.k_gain[0] @ (x - x_ref)), lo, hi)
                traj, ok = self.model.rollout(x, u[j:j + 1], d_seq[j:j + 1])
                if not ok:
                    u[j:] = u_ref
                    break
                x = traj[1]
        return np.clip(u, lo, hi)

    def solve(self, x_meas, d_meas, d_preview=None):
        """Solve the OCP at one sampling instant.

        Returns ``(u_apply, eps, diagnostics)``. If the solver fails outright
        the previous input is re-applied and ``diagnostics.degraded`` is set.
        """
        t0 = time.perf_counter()
        cfg = self.cfg
        n = cfg.n_p
        d_meas = np.asarray(d_meas, float)
        if d_preview is None or cfg.preview == "held":
            d_seq = np.tile(d_meas, (n, 1))
        else:
            d_seq = np.asarray(d_preview, float).reshape(n, 2)
        x_ref, u_ref = self.reference(d_meas)
        ev = _OcpEvaluator(self.model, cfg, self.ti, x_meas, d_seq, self.state.u_prev,
                           x_ref, u_ref)
        u0 = self._initial_guess(x_meas, x_ref, u_ref, d_seq)
        z0 = np.append(u0, 0.0)
        traj0, _ = ev.traj(z0)
        z0[n] = max(0.0, terminal_violation(traj0[n], self.ti, x_ref) if ev.use_terminal else 0.0,
                    ev.state_violation(traj0))
        # normalise by the warm-start cost so the KKT tolerance is relative
        ev.root_scale = 1.0 / np.sqrt(max(1.0, ev.objective(z0)))
        lb = np.append(np.full(n, cfg.bounds.u_lo[0] if cfg.bounds else -np.inf), 0.0)
        ub = np.append(np.full(n, cfg.bounds.u_hi[0] if cfg.bounds else np.inf), np.inf)
        has_con = ev.use_terminal or bool(ev.bound_rows)
        prob = NlpProblem(
            n=n + 1,
            objective=ev.objective,
            constraints=ev.constraints if has_con else None,
            jacobian=ev.constraint_jacobian if has_con else None,
            lb=lb, ub=ub,
            residuals=ev.residuals,
            residual_jacobian=ev.residual_jacobian,
        )
        degraded, message = False, ""
        try:
            res = solve_sqp(prob, z0, self.nlp_options)
            if res.status == INFEASIBLE or not np.all(np.isfinite(res.z)):
                raise MvdcError(f"solver returned {res.status}: {res.message}")
            z = res.z
            status, iters, kkt, message = res.status, res.iterations, res.kkt, res.message
        except (MvdcError, InfeasibleQp, NonFiniteEvaluation, ValueError,
                np.linalg.LinAlgError) as exc:
            degraded, message = True, str(exc)
            z = np.append(np.full(n, self.state.u_prev), 0.0)
            status, iters, kkt = "Failed", 0, float("nan")
        traj, _ = ev.traj(z)
        eps = float(z[n])
        cost = ocp_cost(traj, z[:n], self.state.u_prev, eps, cfg, self.ti, x_ref, u_ref)
        diag = StepDiagnostics(
            status=status, iterations=iters, kkt=kkt, cost=cost, eps=eps,
            terminal_violation=terminal_violation(traj[n], self.ti, x_ref) if ev.use_terminal else 0.0,
            state_violation=ev.state_violation(traj),
            solve_ms=1e3 * (time.perf_counter() - t0),
            degraded=degraded, message=message, predicted=traj, u_seq=z[:n].copy(),
        )
        u_apply = float(z[0])
        if not degraded:
            self.state.warm_start = z[:n].copy()
        self.state.u_prev = u_apply
        return u_apply, eps, diag

    # harness interface
    def step(self, t, x, d, d_preview=None):
        u, eps, diag = self.solve(x, d, d_preview)
        return u, diag

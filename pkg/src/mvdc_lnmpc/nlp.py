"""Sequential quadratic programming for small dense NLPs.

Problems take the form::

    min f(z)   s.t.   c(z) <= 0,   lb <= z <= ub

Subproblems are solved with a dense dual active-set method (Goldfarb and
Idnani), the Hessian is a damped BFGS approximation of the Lagrangian (or a
Gauss-Newton matrix when the objective is a sum of squares) and steps are
globalised with an l1 merit line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InfeasibleQp, NonFiniteEvaluation

CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
INFEASIBLE = "Infeasible"


def fd_gradient(f, z, h=1e-6):
    """Central-difference gradient with step ``h * max(1, |z_j|)``."""
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for j in range(z.size):
        hj = h * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = hj
        fp, fm = f(z + e), f(z - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite objective near coordinate {j}", z)
        g[j] = (fp - fm) / (2 * hj)
    return g


def fd_jacobian(c, z, h=1e-6):
    """Central-difference Jacobian of a vector function, rows = outputs."""
    z = np.asarray(z, dtype=float)
    cols = []
    for j in range(z.size):
        hj = h * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = hj
        cp, cm = np.asarray(c(z + e), float), np.asarray(c(z - e), float)
        if not (np.all(np.isfinite(cp)) and np.all(np.isfinite(cm))):
            raise NonFiniteEvaluation(f"non-finite constraint near coordinate {j}", z)
        cols.append((cp - cm) / (2 * hj))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


@dataclass
class QpSolution:
    d: np.ndarray
    lam: np.ndarray       # general inequality multipliers (>= 0)
    lam_lb: np.ndarray
    lam_ub: np.ndarray
    iterations: int


def solve_qp(h, g, a_c=None, b_c=None, lb=None, ub=None, full_output=False,
             max_iter=None):
    """Minimise ``0.5 d'Hd + g'd`` s.t. ``A_c d <= b_c`` and ``lb <= d <= ub``.

    ``H`` must be symmetric positive definite. Returns ``d``, or a
    :class:`QpSolution` with multipliers when ``full_output`` is set.

    Raises
    ------
    InfeasibleQp
        If the constraints admit no point.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    n = g.size
    rows, rhs, kind = [], [], []
    if a_c is not None and len(a_c):
        a_c = np.atleast_2d(np.asarray(a_c, dtype=float))
        b_c = np.atleast_1d(np.asarray(b_c, dtype=float))
        rows.append(-a_c)
        rhs.append(-b_c)
        kind += [("c", i) for i in range(a_c.shape[0])]
    eye = np.eye(n)
    if lb is not None:
        lb = np.broadcast_to(np.asarray(lb, float), (n,))
        idx = np.flatnonzero(np.isfinite(lb))
        rows.append(eye[idx])
        rhs.append(lb[idx])
        kind += [("lb", i) for i in idx]
    if ub is not None:
        ub = np.broadcast_to(np.asarray(ub, float), (n,))
        idx = np.flatnonzero(np.isfinite(ub))
        rows.append(-eye[idx])
        rhs.append(-ub[idx])
        kind += [("ub", i) for i in idx]
    n_rows = np.vstack(rows) if rows else np.zeros((0, n))
    b_rows = np.concatenate(rhs) if rhs else np.zeros(0)

    d, u, iters = _goldfarb_idnani(h, g, n_rows, b_rows, max_iter or 20 * (n + len(b_rows)) + 50)

    n_c = 0 if a_c is None or not len(a_c) else a_c.shape[0]
    lam = np.zeros(n_c)
    lam_lb, lam_ub = np.zeros(n), np.zeros(n)
    for (which, i), val in zip(kind, u):
        if which == "c":
            lam[i] = val
        elif which == "lb":
            lam_lb[i] = val
        else:
            lam_ub[i] = val
    if full_output:
        return QpSolution(d, lam, lam_lb, lam_ub, iters)
    return d


def _goldfarb_idnani(G, a, N, b, max_iter):
    """Dual active-set solve of ``min 0.5 x'Gx + a'x  s.t.  N x >= b``.

    Returns ``(x, u, iterations)`` with ``u`` the multipliers of every row.
    The projected quantities are recomputed densely each step, which is
    cheap at the sizes used here.
    """
    n = a.size
    m = N.shape[0]
    scale = np.linalg.norm(N, axis=1) if m else np.zeros(0)
    scale[scale == 0] = 1.0
    Nn = N / scale[:, None] if m else N
    bn = b / scale if m else b
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValueError("QP Hessian is not positive definite") from exc

    def ginv(v):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, v))

    x = -ginv(a)
    active: list[int] = []
    u = np.zeros(0)
    mult = np.zeros(m)
    tol = 1e-12 * (1.0 + np.linalg.norm(x))
    it = 0
    while True:
        if m == 0:
            break
        s = Nn @ x - bn
        if active:
            s[active] = np.inf
        p = int(np.argmin(s))
        if s[p] >= -max(tol, 1e-13 * (1.0 + abs(bn[p]))):
            break
        n_plus = Nn[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise InfeasibleQp("active-set iteration limit reached")
            if active:
                na = Nn[active].T
                gn = ginv(na)
                mmat = na.T @ gn
                gnp = ginv(n_plus)
                r = np.linalg.solve(mmat, na.T @ gnp)
                z = gnp - gn @ r
            else:
                r = np.zeros(0)
                z = ginv(n_plus)
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-14:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ n_plus)
            if zn > 1e-14 * max(1.0, float(n_plus @ ginv(n_plus))):
                t2 = (bn[p] - n_plus @ x) / zn
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleQp("constraints are inconsistent")
            step_dual = np.append(-r, 1.0)
            if np.isfinite(t2):
                x = x + t * z
            u_plus = u_plus + t * step_dual
            if t == t2:
                active.append(p)
                u = u_plus
                break
            # drop constraint k, keep trying to satisfy p
            del active[k]
            u_plus = np.delete(u_plus, k)
            u_plus[u_plus < 0] = 0.0
    for j, idx in enumerate(active):
        mult[idx] = u[j]
    return x, mult / scale if m else mult, it


@dataclass
class NlpProblem:
    """Objective, inequality constraints ``c(z) <= 0`` and box bounds.

    Derivative callbacks are optional and default to central differences.
    When ``residuals`` is given the objective is taken to be
    ``sum(residuals(z)**2)`` and a Gauss-Newton Hessian ``2 J'J`` is used in
    place of BFGS.
    """

    n: int
    objective: Callable
    constraints: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    gradient: Optional[Callable] = None
    jacobian: Optional[Callable] = None
    residuals: Optional[Callable] = None
    residual_jacobian: Optional[Callable] = None

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)


@dataclass
class NlpOptions:
    max_iterations: int = 50
    kkt_tolerance: float = 1e-6
    fd_step: float = 1e-6
    penalty_growth: float = 1.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    elastic_weight: float = 1e4

    def __post_init__(self):
        if min(self.max_iterations, self.kkt_tolerance, self.fd_step,
               self.penalty_growth) <= 0:
            raise ValueError("NLP options must be positive")


@dataclass
class NlpResult:
    z: np.ndarray
    f: float
    kkt: float
    iterations: int
    status: str
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_lb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_violation: float = 0.0
    merit_history: list = field(default_factory=list)  # (before, after) per accepted step
    message: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED


class _Evaluator:
    def __init__(self, prob: NlpProblem, opts: NlpOptions):
        self.prob = prob
        self.opts = opts

    def f(self, z):
        if self.prob.residuals is not None:
            r = np.asarray(self.prob.residuals(z), float)
            return float(r @ r)
        return float(self.prob.objective(z))

    def c(self, z):
        if self.prob.constraints is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.prob.constraints(z), float))

    def grad(self, z):
        p = self.prob
        if p.residuals is not None:
            r = np.asarray(p.residuals(z), float)
            jr = self.rjac(z)
            return 2.0 * jr.T @ r
        if p.gradient is not None:
            return np.asarray(p.gradient(z), float)
        return fd_gradient(self.f, z, self.opts.fd_step)

    def rjac(self, z):
        p = self.prob
        if p.residual_jacobian is not None:
            return np.atleast_2d(np.asarray(p.residual_jacobian(z), float))
        return fd_jacobian(lambda w: np.asarray(p.residuals(w), float), z, self.opts.fd_step)

    def jac(self, z):
        p = self.prob
        if p.constraints is None:
            return np.zeros((0, p.n))
        if p.jacobian is not None:
            return np.atleast_2d(np.asarray(p.jacobian(z), float)).reshape(-1, p.n)
        return fd_jacobian(self.c, z, self.opts.fd_step).reshape(-1, p.n)


def kkt_residuals(grad, c, jac, lam, lam_lb, lam_ub, z, lb, ub):
    """Stationarity, primal infeasibility and complementarity (inf-norms)."""
    stat = grad + (jac.T @ lam if lam.size else 0.0) - lam_lb + lam_ub
    feas = max(0.0, float(np.max(c))) if c.size else 0.0
    comp = float(np.max(np.abs(lam * c))) if c.size else 0.0
    with np.errstate(invalid="ignore"):
        gap_lb = np.where(np.isfinite(lb), z - lb, 0.0)
        gap_ub = np.where(np.isfinite(ub), ub - z, 0.0)
    comp = max(comp, float(np.max(np.abs(lam_lb * gap_lb), initial=0.0)),
               float(np.max(np.abs(lam_ub * gap_ub), initial=0.0)))
    return float(np.max(np.abs(stat), initial=0.0)), feas, comp


def _regularize(h):
    h = 0.5 * (h + h.T)
    lam = 1e-8 * max(1.0, float(np.max(np.abs(np.diag(h)))))
    shift = 0.0
    for _ in range(30):
        try:
            np.linalg.cholesky(h + shift * np.eye(h.shape[0]))
            return h + shift * np.eye(h.shape[0])
        except np.linalg.LinAlgError:
            shift = lam if shift == 0.0 else shift * 10.0
    raise ValueError("could not regularise Hessian")


def solve_sqp(problem: NlpProblem, z0, options: NlpOptions | None = None) -> NlpResult:
    """Solve ``problem`` from ``z0`` (clipped into the box).

    Raises
    ------
    NonFiniteEvaluation
        If the objective or constraints are not finite at an iterate that
        the method must use (the starting point).
    """
    opts = options or NlpOptions()
    ev = _Evaluator(problem, opts)
    lb, ub = problem.lb, problem.ub
    z = np.clip(np.asarray(z0, dtype=float), lb, ub)
    n = z.size

    f = ev.f(z)
    c = ev.c(z)
    if not np.isfinite(f) or not np.all(np.isfinite(c)):
        raise NonFiniteEvaluation("non-finite evaluation at the starting point", z)
    grad = ev.grad(z)
    jac = ev.jac(z)
    gauss_newton = problem.residuals is not None
    bfgs = np.eye(n)
    mu = 0.0
    lam = np.zeros(c.size)
    lam_lb, lam_ub = np.zeros(n), np.zeros(n)

    def merit(fv, cv, weight):
        return fv + weight * (float(np.sum(np.maximum(cv, 0.0))) if cv.size else 0.0)

    history = []
    status, message = MAX_ITERATIONS, "iteration limit"
    kkt = np.inf
    it = 0
    for it in range(1, opts.max_iterations + 1):
        if gauss_newton:
            jr = ev.rjac(z)
            hess = _regularize(2.0 * jr.T @ jr)
        else:
            hess = _regularize(bfgs)
        elastic = False
        try:
            qp = solve_qp(hess, grad, jac if c.size else None, -c if c.size else None,
                          lb - z, ub - z, full_output=True)
            d = qp.d
        except InfeasibleQp:
            elastic = True
            d, qp = _elastic_step(hess, grad, jac, c, lb - z, ub - z, opts.elastic_weight)
        lam_qp, lam_lb, lam_ub = qp.lam, qp.lam_lb, qp.lam_ub

        stat, feas, comp = kkt_residuals(grad, c, jac, lam_qp, lam_lb, lam_ub, z, lb, ub)
        kkt = max(stat, feas, comp)
        if kkt <= opts.kkt_tolerance and not elastic:
            lam = lam_qp
            status, message = CONVERGED, "KKT tolerance met"
            it -= 1
            break

        if lam_qp.size:
            need = float(np.max(lam_qp))
            if mu < need * 1.1:
                mu = max(need * opts.penalty_growth, mu * opts.penalty_growth, 1e-8)
        phi0 = merit(f, c, mu)
        viol0 = float(np.sum(np.maximum(c, 0.0))) if c.size else 0.0
        dderiv = float(grad @ d) - mu * viol0
        if dderiv > 0 and not elastic:
            dderiv = -abs(float(d @ hess @ d))

        alpha = 1.0
        accepted = False
        while alpha >= opts.min_step:
            z_try = np.clip(z + alpha * d, lb, ub)
            f_try = ev.f(z_try)
            c_try = ev.c(z_try)
            if np.isfinite(f_try) and np.all(np.isfinite(c_try)):
                phi = merit(f_try, c_try, mu)
                if phi <= phi0 + opts.armijo * alpha * min(dderiv, 0.0):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            lam = lam_qp
            step_norm = float(np.max(np.abs(d))) if d.size else 0.0
            if kkt <= 10 * opts.kkt_tolerance or step_norm <= 1e-12 * (1 + np.max(np.abs(z))):
                status, message = CONVERGED, "no further merit decrease possible"
            else:
                message = "line search failed"
            it -= 1
            break

        grad_lag_old = grad + (jac.T @ lam_qp if lam_qp.size else 0.0)
        z_new = z_try
        f, c = f_try, c_try
        grad = ev.grad(z_new)
        jac = ev.jac(z_new)
        lam = lam_qp
        history.append((phi0, phi))
        if not gauss_newton:
            grad_lag_new = grad + (jac.T @ lam_qp if lam_qp.size else 0.0)
            bfgs = _damped_bfgs(bfgs, z_new - z, grad_lag_new - grad_lag_old)
        z = z_new
    else:
        it = opts.max_iterations

    if status != CONVERGED:
        # report an honest residual at the final iterate
        try:
            hess = _regularize(2.0 * ev.rjac(z).T @ ev.rjac(z)) if gauss_newton else _regularize(bfgs)
            qp = solve_qp(hess, grad, jac if c.size else None, -c if c.size else None,
                          lb - z, ub - z, full_output=True)
            lam, lam_lb, lam_ub = qp.lam, qp.lam_lb, qp.lam_ub
            kkt = max(kkt_residuals(grad, c, jac, lam, lam_lb, lam_ub, z, lb, ub))
        except InfeasibleQp:
            pass
        if kkt <= opts.kkt_tolerance:
            status, message = CONVERGED, "KKT tolerance met"
    max_viol = max(0.0, float(np.max(c))) if c.size else 0.0
    if status != CONVERGED and max_viol > 1e-6:
        status = INFEASIBLE
        message = f"constraint violation {max_viol:.3g} remains"
    return NlpResult(z=z, f=float(f), kkt=float(kkt), iterations=it, status=status,
                     lam=lam, lam_lb=lam_lb, lam_ub=lam_ub, max_violation=max_viol,
                     merit_history=history, message=message)


def _elastic_step(hess, grad, jac, c, lo, hi, weight):
    """Feasibility-restoring QP: constraints relaxed by ``t >= 0`` with an
    l1 (plus small quadratic) penalty on ``t``."""
    n, m = grad.size, c.size
    h = np.zeros((n + m, n + m))
    h[:n, :n] = hess
    h[n:, n:] = 1e-6 * np.eye(m)
    g = np.concatenate([grad, np.full(m, weight)])
    a = np.hstack([jac, -np.eye(m)])
    lo_e = np.concatenate([lo, np.zeros(m)])
    hi_e = np.concatenate([hi, np.full(m, np.inf)])
    sol = solve_qp(h, g, a, -c, lo_e, hi_e, full_output=True)
    d = sol.d[:n]
    qp = QpSolution(d, sol.lam, sol.lam_lb[:n], sol.lam_ub[:n], sol.iterations)
    return d, qp


def _damped_bfgs(b, s, y):
    """Powell-damped BFGS update; skips degenerate steps."""
    bs = b @ s
    sbs = float(s @ bs)
    if sbs <= 1e-300:
        return b
    sy = float(s @ y)
    if sy < 0.2 * sbs:
        theta = 0.8 * sbs / (sbs - sy)
        y = theta * y + (1 - theta) * bs
        sy = float(s @ y)
    if sy <= 1e-300:
        return b
    return b - np.outer(bs, bs) / sbs + np.outer(y, y) / sy

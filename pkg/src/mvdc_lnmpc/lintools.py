"""Offline synthesis chain: linearisation, discretisation, DLQR gain,
discrete Lyapunov solve and the small matrix checks they rely on.

Feedback gains follow the ``u = K x`` convention, so the closed loop is
``A + B K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotSymmetric, SingularSystem, UnstableClosedLoop
from .model import PlantParams, Topology, derivatives


@dataclass
class LinearizedModel:
    """Discrete-time linearisation ``x+ = x_e + A_d (x - x_e) + B_d (u - u_e)``.

    Also usable as a prediction model: it exposes the same ``step`` and
    ``rollout`` methods as :class:`~mvdc_lnmpc.model.Plant` (the disturbance
    argument is ignored, the model is frozen at its synthesis load).
    """

    a_d: np.ndarray
    b_d: np.ndarray
    x_e: np.ndarray
    u_e: float
    dt: float

    @property
    def n_x(self):
        return self.a_d.shape[0]

    def step(self, x, u, d=None):
        return self.x_e + self.a_d @ (np.asarray(x) - self.x_e) \
            + self.b_d[:, 0] * (float(u) - self.u_e)

    def rollout(self, x0, u_seq, d_seq=None):
        traj = np.empty((len(u_seq) + 1, self.n_x))
        traj[0] = x0
        for j, u in enumerate(u_seq):
            traj[j + 1] = self.step(traj[j], u)
        return traj, True

    def rollout_batch(self, x0, u_seqs, d_seq=None):
        u_seqs = np.asarray(u_seqs, dtype=float)
        m, n = u_seqs.shape
        trajs = np.empty((m, n + 1, self.n_x))
        trajs[:, 0] = np.asarray(x0) - self.x_e
        du = u_seqs - self.u_e
        for j in range(n):
            trajs[:, j + 1] = trajs[:, j] @ self.a_d.T + np.outer(du[:, j], self.b_d[:, 0])
        return trajs + self.x_e, np.ones(m, dtype=bool)


def jacobian(params: PlantParams, topo: Topology, x_e, u_e, d, fn=None):
    """Continuous-time Jacobians ``(A, B)`` by central finite differences.

    The step for coordinate ``j`` is ``max(1e-6, 1e-6 * |x_j|)``. ``fn``
    replaces the plant right-hand side (signature ``fn(x, u) -> xdot``),
    which is how the routine is exercised on surrogate systems.
    """
    if fn is None:
        def fn(x, u):
            return derivatives(params, topo, x, u, d)
    x_e = np.asarray(x_e, dtype=float)
    u_e = np.atleast_1d(np.asarray(u_e, dtype=float))
    f0 = np.asarray(fn(x_e, u_e))
    a = np.empty((f0.size, x_e.size))
    b = np.empty((f0.size, u_e.size))
    for j in range(x_e.size):
        h = max(1e-6, 1e-6 * abs(x_e[j]))
        e = np.zeros_like(x_e)
        e[j] = h
        a[:, j] = (np.asarray(fn(x_e + e, u_e)) - np.asarray(fn(x_e - e, u_e))) / (2 * h)
    for j in range(u_e.size):
        h = max(1e-6, 1e-6 * abs(u_e[j]))
        e = np.zeros_like(u_e)
        e[j] = h
        b[:, j] = (np.asarray(fn(x_e, u_e + e)) - np.asarray(fn(x_e, u_e - e))) / (2 * h)
    return a, b


def discretize(a, b, dt, max_terms=400):
    """Zero-order-hold discretisation by truncated exponential series.

    ``A_d = sum (A dt)^m / m!`` and ``B_d = (sum A^(m-1) dt^m / m!) B``,
    summed until the newest term's norm drops below ``1e-14 * ||A_d||``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    n = a.shape[0]
    ad = np.eye(n)
    gamma = dt * np.eye(n)  # integral of exp(A s) ds over [0, dt]
    term = np.eye(n)        # (A dt)^m / m!
    for m in range(1, max_terms):
        term = term @ (a * dt) / m
        ad = ad + term
        gamma = gamma + term * (dt / (m + 1))
        if np.linalg.norm(term) < 1e-14 * np.linalg.norm(ad):
            break
    else:
        raise NoConvergence("exponential series did not converge")
    return ad, gamma @ b


def dlqr(a_d, b_d, w_x, w_du, tol=1e-10, max_iter=200_000):
    """Discrete LQR gain by fixed-point iteration of the Riccati equation.

    Returns ``K`` with ``u = K x``; ``A_d + B_d K`` is Schur stable.

    Raises
    ------
    NoConvergence
        If the iteration stalls or the closed loop is not stable, which
        signals a non-stabilisable pair.
    """
    a = np.atleast_2d(np.asarray(a_d, dtype=float))
    b = np.asarray(b_d, dtype=float).reshape(a.shape[0], -1)
    q = np.atleast_2d(np.asarray(w_x, dtype=float))
    r = np.atleast_2d(np.asarray(w_du, dtype=float))
    p = q.copy()
    for _ in range(max_iter):
        bp = b.T @ p
        gain = np.linalg.solve(r + bp @ b, bp @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise NoConvergence("Riccati iteration diverged")
        scale = max(np.linalg.norm(p_next), 1e-300)
        if np.linalg.norm(p_next - p) <= tol * scale:
            p = p_next
            break
        p = p_next
    else:
        raise NoConvergence("Riccati iteration hit the iteration limit")
    k = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    if spectral_radius(a + b @ k) >= 1.0:
        raise NoConvergence("Riccati fixed point does not stabilise the pair")
    return k


def riccati_residual(a_d, b_d, w_x, w_du, p):
    """Relative Frobenius residual of the discrete algebraic Riccati equation."""
    a, b = np.atleast_2d(a_d), np.atleast_2d(b_d)
    bp = b.T @ p
    res = a.T @ p @ a - p - a.T @ p @ b @ np.linalg.solve(w_du + bp @ b, bp @ a) + w_x
    return np.linalg.norm(res) / np.linalg.norm(p)


def dlyap(a_tilde, q, form="standard"):
    """Solve a discrete Lyapunov equation by Kronecker vectorisation.

    ``form="gramian"``  solves  ``Ã W Ãᵀ - W + Q = 0``
    ``form="standard"`` solves  ``Ãᵀ W Ã - W + Q = 0``

    The standard form is the one whose solution bounds the infinite-horizon
    cost of ``u = K x`` and is what the controller uses; the other form is
    kept for reporting.

    Raises
    ------
    UnstableClosedLoop
        If the spectral radius of ``Ã`` is not below one.
    SingularSystem
        If the Kronecker system is numerically singular.
    """
    at = np.atleast_2d(np.asarray(a_tilde, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if form not in ("gramian", "standard"):
        raise ValueError(f"unknown form {form!r}")
    if spectral_radius(at) >= 1.0:
        raise UnstableClosedLoop("closed-loop matrix is not Schur stable")
    n = at.shape[0]
    m = at if form == "gramian" else at.T
    # vec(M W Mᵀ) = (M ⊗ M) vec(W) for column-stacked vec
    lhs = np.eye(n * n) - np.kron(m, m)
    if np.linalg.cond(lhs) > 1e14:
        raise SingularSystem("Kronecker Lyapunov system is near-singular")
    w = np.linalg.solve(lhs, q.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (w + w.T)


def lyapunov_residual(a_tilde, w, q, form="standard"):
    """Relative Frobenius residual ``||·||_F / ||Q||_F`` of :func:`dlyap`."""
    at = np.atleast_2d(a_tilde)
    m = at if form == "gramian" else at.T
    return np.linalg.norm(m @ w @ m.T - w + q) / np.linalg.norm(q)


def is_positive_definite(m, sym_tol=1e-10):
    """True iff the Cholesky factorisation of ``m`` succeeds.

    Raises
    ------
    NotSymmetric
        If ``m`` is not symmetric to ``sym_tol`` (relative to its norm).
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise NotSymmetric("matrix is not square")
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m - m.T)) > sym_tol * scale:
        raise NotSymmetric("matrix is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


def spectral_radius(m, tol=1e-10, max_iter=20_000, seed=0):
    """Largest eigenvalue modulus by power iteration.

    Plain power iteration cannot separate a complex-conjugate dominant pair,
    so every pair of successive iterates is fitted with the two-term
    recurrence ``v_{k+2} = c1 v_{k+1} + c0 v_k``; its roots are the two
    dominant eigenvalues once the subdominant part of the spectrum has been
    deflated away by the iteration. When the fit is rank deficient (a single
    real dominant eigenvalue) the norm ratio is used instead.

    Raises
    ------
    NoConvergence
        If the estimate does not settle to ``tol``.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = m.shape[0]
    if m.shape[1] != n:
        raise ValueError("matrix must be square")
    if n == 1:
        return abs(float(m[0, 0]))
    norm = np.linalg.norm(m, ord=np.inf)
    if norm == 0.0:
        return 0.0
    a = m / norm
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    prev = None
    for it in range(max_iter):
        w1 = a @ v
        w2 = a @ w1
        est = _pair_modulus(v, w1, w2)
        nw = np.linalg.norm(w1)
        if nw == 0.0:
            return 0.0
        v = w1 / nw
        if prev is not None and abs(est - prev) <= tol * max(est, 1e-300) and it > 5:
            return est * norm
        prev = est
    raise NoConvergence("power iteration did not converge")


def _pair_modulus(v0, v1, v2):
    """Dominant modulus from three successive power iterates.

    Fits ``v2 ≈ c1 v1 + c0 v0`` by least squares. A dominant real eigenvalue
    makes the fit rank-deficient, in which case the Rayleigh-type ratio is
    used instead.
    """
    basis = np.column_stack([v1, v0])
    gram = basis.T @ basis
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    if det <= 1e-12 * gram[0, 0] * gram[1, 1]:
        return float(np.linalg.norm(v1) / np.linalg.norm(v0))
    c1, c0 = np.linalg.solve(gram, basis.T @ v2)
    disc = c1 * c1 + 4 * c0
    if disc < 0:
        return float(np.sqrt(-c0))
    r1 = abs(0.5 * (c1 + np.sqrt(disc)))
    r2 = abs(0.5 * (c1 - np.sqrt(disc)))
    return float(max(r1, r2))

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernels for the reduced-order MVDC network.

Parameter vector layout (``pvec``)::

    [c_eq, v_ref, v_floor, inv_l[0:n_units], r[0:n_units], inv_c[0:n_sc]]

with ``n_units = n_gen + n_sc``. State layout is
``[v_o, i_gen[0:n_gen], i_sc[0:n_sc], v_c[0:n_sc]]``.
"""

import numpy as np
cimport numpy as cnp

from .errors import VoltageFloorViolation

cnp.import_array()


cdef int _deriv(const double* p, int n_gen, int n_sc, const double* x,
                double u, double load, double* out) noexcept nogil:
    cdef int n_units = n_gen + n_sc
    cdef double c_eq = p[0]
    cdef double v_ref = p[1]
    cdef double v_floor = p[2]
    cdef const double* inv_l = p + 3
    cdef const double* r = p + 3 + n_units
    cdef const double* inv_c = p + 3 + 2 * n_units
    cdef double v = x[0]
    cdef double total = 0.0
    cdef double cur
    cdef int i
    if v < v_floor:
        return 1
    for i in range(n_gen):
        cur = x[1 + i]
        total += cur
        out[1 + i] = (v_ref - r[i] * cur - v + u) * inv_l[i]
    for i in range(n_sc):
        cur = x[1 + n_gen + i]
        total += cur
        out[1 + n_gen + i] = (v_ref - r[n_gen + i] * cur
                              - x[1 + n_units + i] - v) * inv_l[n_gen + i]
        out[1 + n_units + i] = cur * inv_c[i]
    out[0] = (total - load / v) / c_eq
    return 0


cdef int _rk4(const double* p, int n_gen, int n_sc, double* x, double u,
              double load, double dt, int substeps, double* work) noexcept nogil:
    cdef int nx = 1 + n_gen + 2 * n_sc
    cdef double h = dt / substeps
    cdef double* k1 = work
    cdef double* k2 = work + nx
    cdef double* k3 = work + 2 * nx
    cdef double* k4 = work + 3 * nx
    cdef double* tmp = work + 4 * nx
    cdef int s, i
    for s in range(substeps):
        if _deriv(p, n_gen, n_sc, x, u, load, k1):
            return 1
        for i in range(nx):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        if _deriv(p, n_gen, n_sc, tmp, u, load, k2):
            return 1
        for i in range(nx):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        if _deriv(p, n_gen, n_sc, tmp, u, load, k3):
            return 1
        for i in range(nx):
            tmp[i] = x[i] + h * k3[i]
        if _deriv(p, n_gen, n_sc, tmp, u, load, k4):
            return 1
        for i in range(nx):
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return 0


def derivatives(double[::1] pvec, int n_gen, int n_sc, double[::1] x,
                double u, double[::1] d):
    cdef int nx = 1 + n_gen + 2 * n_sc
    out = np.empty(nx)
    cdef double[::1] o = out
    if _deriv(&pvec[0], n_gen, n_sc, &x[0], u, d[0] + d[1], &o[0]):
        raise VoltageFloorViolation(x[0], pvec[2])
    return out


def rk4_step(double[::1] pvec, int n_gen, int n_sc, double[::1] x, double u,
             double[::1] d, double dt, int substeps):
    cdef int nx = 1 + n_gen + 2 * n_sc
    out = np.array(x, dtype=np.float64, copy=True)
    cdef double[::1] o = out
    cdef double[::1] work = np.empty(5 * nx)
    if _rk4(&pvec[0], n_gen, n_sc, &o[0], u, d[0] + d[1], dt, substeps, &work[0]):
        raise VoltageFloorViolation(float(np.min(out[:1])), pvec[2])
    return out


def rollout(double[::1] pvec, int n_gen, int n_sc, double[::1] x0,
            double[::1] u_seq, double[:, ::1] d_seq, double dt, int substeps):
    """Return ``(traj, ok)``; on a floor violation the remaining rows repeat
    the last valid state and ``ok`` is False."""
    cdef int nx = 1 + n_gen + 2 * n_sc
    cdef int n = u_seq.shape[0]
    traj = np.empty((n + 1, nx))
    cdef double[:, ::1] t = traj
    cdef double[::1] work = np.empty(5 * nx)
    cdef int j, i
    cdef int bad = 0
    for i in range(nx):
        t[0, i] = x0[i]
    with nogil:
        for j in range(n):
            for i in range(nx):
                t[j + 1, i] = t[j, i]
            if not bad:
                if _rk4(&pvec[0], n_gen, n_sc, &t[j + 1, 0], u_seq[j],
                        d_seq[j, 0] + d_seq[j, 1], dt, substeps, &work[0]):
                    bad = 1
                    for i in range(nx):
                        t[j + 1, i] = t[j, i]
    return traj, not bad


def rollout_batch(double[::1] pvec, int n_gen, int n_sc, double[::1] x0,
                  double[:, ::1] u_seqs, double[:, ::1] d_seq, double dt,
                  int substeps):
    """Roll out many input sequences from one initial state.

    Returns ``(trajs, ok)`` with shapes ``(m, n + 1, nx)`` and ``(m,)``.
    """
    cdef int nx = 1 + n_gen + 2 * n_sc
    cdef int m = u_seqs.shape[0]
    cdef int n = u_seqs.shape[1]
    trajs = np.empty((m, n + 1, nx))
    oks = np.ones(m, dtype=np.uint8)
    cdef double[:, :, ::1] t = trajs
    cdef cnp.uint8_t[::1] ok = oks
    cdef double[::1] work = np.empty(5 * nx)
    cdef int b, j, i
    with nogil:
        for b in range(m):
            for i in range(nx):
                t[b, 0, i] = x0[i]
            for j in range(n):
                for i in range(nx):
                    t[b, j + 1, i] = t[b, j, i]
                if ok[b]:
                    if _rk4(&pvec[0], n_gen, n_sc, &t[b, j + 1, 0], u_seqs[b, j],
                            d_seq[j, 0] + d_seq[j, 1], dt, substeps, &work[0]):
                        ok[b] = 0
                        for i in range(nx):
                            t[b, j + 1, i] = t[b, j, i]
    return trajs, oks.astype(bool)

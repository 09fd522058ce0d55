"""Pure numpy implementation of the kernels in ``_kernels.pyx``.

Same signatures and parameter layout as the compiled module. The batch
functions are vectorised over their leading axis, so this backend is still
usable (if slow) for full closed-loop runs.
"""

import numpy as np

from .errors import VoltageFloorViolation


def _unpack(pvec, n_gen, n_sc):
    n_units = n_gen + n_sc
    inv_l = pvec[3:3 + n_units]
    r = pvec[3 + n_units:3 + 2 * n_units]
    inv_c = pvec[3 + 2 * n_units:3 + 2 * n_units + n_sc]
    return pvec[0], pvec[1], pvec[2], inv_l, r, inv_c


def _deriv(pvec, n_gen, n_sc, x, u, load):
    # x: (..., nx); u, load: (...)
    c_eq, v_ref, v_floor, inv_l, r, inv_c = _unpack(pvec, n_gen, n_sc)
    n_units = n_gen + n_sc
    v = x[..., 0]
    if np.any(v < v_floor):
        return None
    cur = x[..., 1:1 + n_units]
    vc = x[..., 1 + n_units:]
    out = np.empty_like(x)
    out[..., 0] = (cur.sum(axis=-1) - load / v) / c_eq
    drive = (v_ref - v + np.asarray(u))[..., None]
    out[..., 1:1 + n_gen] = (drive - r[:n_gen] * cur[..., :n_gen]) * inv_l[:n_gen]
    out[..., 1 + n_gen:1 + n_units] = (
        (v_ref - v)[..., None] - r[n_gen:] * cur[..., n_gen:] - vc
    ) * inv_l[n_gen:]
    out[..., 1 + n_units:] = cur[..., n_gen:] * inv_c
    return out


def _rk4(pvec, n_gen, n_sc, x, u, load, dt, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = _deriv(pvec, n_gen, n_sc, x, u, load)
        if k1 is None:
            return None
        k2 = _deriv(pvec, n_gen, n_sc, x + 0.5 * h * k1, u, load)
        if k2 is None:
            return None
        k3 = _deriv(pvec, n_gen, n_sc, x + 0.5 * h * k2, u, load)
        if k3 is None:
            return None
        k4 = _deriv(pvec, n_gen, n_sc, x + h * k3, u, load)
        if k4 is None:
            return None
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def derivatives(pvec, n_gen, n_sc, x, u, d):
    x = np.asarray(x, dtype=float)
    out = _deriv(pvec, n_gen, n_sc, x, float(u), float(d[0] + d[1]))
    if out is None:
        raise VoltageFloorViolation(float(x[0]), float(pvec[2]))
    return out


def rk4_step(pvec, n_gen, n_sc, x, u, d, dt, substeps):
    x = np.array(x, dtype=float)
    out = _rk4(pvec, n_gen, n_sc, x, float(u), float(d[0] + d[1]), dt, substeps)
    if out is None:
        raise VoltageFloorViolation(float(x[0]), float(pvec[2]))
    return out


def rollout(pvec, n_gen, n_sc, x0, u_seq, d_seq, dt, substeps):
    trajs, ok = rollout_batch(pvec, n_gen, n_sc, x0, np.asarray(u_seq)[None, :],
                              d_seq, dt, substeps)
    return trajs[0], bool(ok[0])


def rollout_batch(pvec, n_gen, n_sc, x0, u_seqs, d_seq, dt, substeps):
    u_seqs = np.asarray(u_seqs, dtype=float)
    d_seq = np.asarray(d_seq, dtype=float)
    m, n = u_seqs.shape
    nx = len(x0)
    trajs = np.empty((m, n + 1, nx))
    trajs[:, 0] = x0
    ok = np.ones(m, dtype=bool)
    for j in range(n):
        x = trajs[:, j]
        nxt = x.copy()
        idx = np.flatnonzero(ok)
        if idx.size:
            stepped = _rk4(pvec, n_gen, n_sc, x[idx], u_seqs[idx, j],
                           np.full(idx.size, d_seq[j, 0] + d_seq[j, 1]), dt, substeps)
            if stepped is None:
                # fall back to per-row stepping to find the offenders
                for b in idx:
                    s = _rk4(pvec, n_gen, n_sc, x[b], u_seqs[b, j],
                             d_seq[j, 0] + d_seq[j, 1], dt, substeps)
                    if s is None:
                        ok[b] = False
                    else:
                        nxt[b] = s
            else:
                nxt[idx] = stepped
        trajs[:, j + 1] = nxt
    return trajs, ok

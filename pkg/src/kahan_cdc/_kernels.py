"""Compiled inner loops.

Everything here works on raw arrays: ``q`` is the symmetric quadratic tensor
of shape ``(m, m, m)`` and ``b`` the linear part of shape ``(m, m)``.  Status
codes are returned instead of raising so the loops stay ``nogil``.
"""

import numpy as np
from numba import njit

OK = 0
SINGULAR = 1
NONFINITE = 2
NEWTON_FAIL = 3
UNDERFLOW = 4
MAX_STEPS = 5


@njit(cache=True, nogil=True)
def field(q, b, u, out):
    m = u.shape[0]
    for i in range(m):
        s = 0.0
        for j in range(m):
            bj = b[i, j]
            acc = 0.0
            for k in range(m):
                acc += q[i, j, k] * u[k]
            s += (acc + bj) * u[j]
        out[i] = s


@njit(cache=True, nogil=True)
def jacobian(q, b, u, out):
    m = u.shape[0]
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += q[i, j, k] * u[k]
            out[i, j] = 2.0 * acc + b[i, j]


@njit(cache=True, nogil=True)
def solve_inplace(a, x):
    """Gaussian elimination with partial pivoting; overwrites ``a`` and ``x``.

    Returns False on an exactly singular pivot.
    """
    m = x.shape[0]
    for c in range(m):
        p = c
        best = abs(a[c, c])
        for r in range(c + 1, m):
            v = abs(a[r, c])
            if v > best:
                best = v
                p = r
        if best == 0.0:
            return False
        if p != c:
            for k in range(m):
                tmp = a[c, k]
                a[c, k] = a[p, k]
                a[p, k] = tmp
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        piv = a[c, c]
        for r in range(c + 1, m):
            fac = a[r, c] / piv
            if fac != 0.0:
                for k in range(c + 1, m):
                    a[r, k] -= fac * a[c, k]
                x[r] -= fac * x[c]
    for r in range(m - 1, -1, -1):
        s = x[r]
        for k in range(r + 1, m):
            s -= a[r, k] * x[k]
        x[r] = s / a[r, r]
    return True


@njit(cache=True, nogil=True)
def kahan_into(q, b, u, dt, out, work_a, work_x):
    """One linearly implicit Kahan step from ``u``; result written to ``out``."""
    m = u.shape[0]
    field(q, b, u, work_x)
    jacobian(q, b, u, work_a)
    for i in range(m):
        work_x[i] *= dt
        for j in range(m):
            work_a[i, j] *= -0.5 * dt
        work_a[i, i] += 1.0
    if not solve_inplace(work_a, work_x):
        return SINGULAR
    for i in range(m):
        v = u[i] + work_x[i]
        if not np.isfinite(v):
            return NONFINITE
        out[i] = v
    return OK


@njit(cache=True, nogil=True)
def kahan_run(q, b, u0, dt, steps, out):
    """Fill ``out[0..steps]`` with a fixed-step Kahan trajectory.

    Returns ``(status, failing_index)``.
    """
    m = u0.shape[0]
    work_a = np.empty((m, m))
    work_x = np.empty(m)
    out[0, :] = u0
    for n in range(steps):
        st = kahan_into(q, b, out[n], dt, out[n + 1], work_a, work_x)
        if st != OK:
            return st, n
    return OK, -1


@njit(cache=True, nogil=True)
def kahan_final(q, b, u0, dt, steps, sample_every, out):
    """Kahan trajectory that keeps only every ``sample_every``-th state."""
    m = u0.shape[0]
    work_a = np.empty((m, m))
    work_x = np.empty(m)
    cur = u0.copy()
    nxt = np.empty(m)
    out[0, :] = u0
    row = 1
    for n in range(steps):
        st = kahan_into(q, b, cur, dt, nxt, work_a, work_x)
        if st != OK:
            return st, n
        cur[:] = nxt
        if (n + 1) % sample_every == 0:
            out[row, :] = cur
            row += 1
    return OK, -1


@njit(cache=True, nogil=True)
def midpoint_error_step(q, b, e, u_mid, du_mid, h, tol, max_iters, out, work_a, work_r, work_v):
    """Implicit midpoint step for e' = f(e + U(t)) - U'(t) with U, U' frozen at the midpoint.

    Returns ``(status, iterations, residual_norm)``.
    """
    m = e.shape[0]
    for i in range(m):
        out[i] = e[i]
    res = np.inf
    for it in range(max_iters + 1):
        for i in range(m):
            work_v[i] = 0.5 * (e[i] + out[i]) + u_mid[i]
        field(q, b, work_v, work_r)
        res2 = 0.0
        for i in range(m):
            r = out[i] - e[i] - h * (work_r[i] - du_mid[i])
            work_r[i] = r
            res2 += r * r
        res = np.sqrt(res2)
        if not np.isfinite(res):
            return NONFINITE, it, res
        # At least one update: a tiny initial residual does not mean a tiny correction.
        if res <= tol and it > 0:
            return OK, it, res
        if it == max_iters:
            break
        jacobian(q, b, work_v, work_a)
        for i in range(m):
            for j in range(m):
                work_a[i, j] *= -0.5 * h
            work_a[i, i] += 1.0
        if not solve_inplace(work_a, work_r):
            return SINGULAR, it, res
        for i in range(m):
            out[i] -= work_r[i]
    return NEWTON_FAIL, max_iters, res


@njit(cache=True, nogil=True)
def cdc_run(q, b, u0, dt, intervals, n, corrections, interp_mid, deriv_mid, tol, max_iters,
            out, nodes_out):
    """Deferred-correction propagation over ``intervals`` intervals of length ``dt``.

    ``interp_mid[i]`` / ``deriv_mid[i]`` hold the Lagrange basis values and
    time derivatives at the midpoint between nodes i and i+1.  ``nodes_out``
    is either empty or of shape ``(intervals, n, m)``.

    Returns ``(status, interval, node, sweep)`` of the first failure.
    """
    m = u0.shape[0]
    h = dt / (n - 1)
    work_a = np.empty((m, m))
    work_x = np.empty(m)
    work_r = np.empty(m)
    work_v = np.empty(m)
    U = np.empty((n, m))
    E = np.empty((n, m))
    u_mid = np.empty(m)
    du_mid = np.empty(m)
    keep_nodes = nodes_out.shape[0] > 0
    out[0, :] = u0
    for jdx in range(intervals):
        U[0, :] = out[jdx]
        for i in range(n - 1):
            st = kahan_into(q, b, U[i], h, U[i + 1], work_a, work_x)
            if st != OK:
                return st, jdx, i + 1, 0
        for s in range(1, corrections + 1):
            for c in range(m):
                E[0, c] = 0.0
            for i in range(n - 1):
                # Sums over differences to the left node: the basis sums to 1 and
                # its derivative to 0, and differencing first avoids an O(eps/h)
                # bias in U' that otherwise accumulates over many intervals.
                for c in range(m):
                    anchor = U[i, c]
                    a1 = 0.0
                    a2 = 0.0
                    for k in range(n):
                        d = U[k, c] - anchor
                        a1 += interp_mid[i, k] * d
                        a2 += deriv_mid[i, k] * d
                    u_mid[c] = anchor + a1
                    du_mid[c] = a2
                st, _, _ = midpoint_error_step(q, b, E[i], u_mid, du_mid, h, tol, max_iters,
                                               E[i + 1], work_a, work_r, work_v)
                if st != OK:
                    return st, jdx, i + 1, s
            for i in range(n):
                for c in range(m):
                    U[i, c] += E[i, c]
        out[jdx + 1, :] = U[n - 1]
        if keep_nodes:
            nodes_out[jdx, :, :] = U
    return OK, -1, -1, -1


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40, 9.0 / 40, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0.0, 0.0, 0.0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0.0, 0.0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0.0],
    [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
])
_B5 = np.array([35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0])
# 5th minus 4th order weights.
_DB = _B5 - np.array([5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640,
                      -92097.0 / 339200, 187.0 / 2100, 1.0 / 40])


@njit(cache=True, nogil=True)
def dopri_run(q, b, u0, t0, t_out, rtol, atol, h_min, max_steps, out):
    """Adaptive DP5(4) with PI step control, landing exactly on each ``t_out``.

    ``out[0]`` is ``u0`` at ``t0``; ``out[k+1]`` corresponds to ``t_out[k]``.
    Returns ``(status, accepted_steps, rejected_steps)``.
    """
    m = u0.shape[0]
    c = _C
    a = _A
    b5 = _B5
    db = _DB
    beta = 0.04
    expo = 0.2 - 0.75 * beta
    safety = 0.9
    fac_min = 0.2
    fac_max = 10.0
    err_old = 1e-4

    k = np.empty((7, m))
    y = u0.copy()
    ynew = np.empty(m)
    ytmp = np.empty(m)
    out[0, :] = u0
    t = t0
    n_out = t_out.shape[0]

    field(q, b, y, k[0])
    # Initial step from Hairer's heuristic.
    d0 = 0.0
    d1 = 0.0
    for i in range(m):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k[0, i] / sc) ** 2
    d0 = np.sqrt(d0 / m)
    d1 = np.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    if n_out > 0:
        h = min(h, t_out[n_out - 1] - t0)

    accepted = 0
    rejected = 0
    idx = 0
    last_rejected = False
    while idx < n_out:
        target = t_out[idx]
        if target <= t:
            out[idx + 1, :] = y
            idx += 1
            continue
        if accepted + rejected >= max_steps:
            return MAX_STEPS, accepted, rejected
        if h < h_min:
            return UNDERFLOW, accepted, rejected
        landing = False
        h_try = h
        if t + h_try >= target - 1e-15 * abs(target):
            h_try = target - t
            landing = True
        for s in range(1, 7):
            for i in range(m):
                acc = y[i]
                for r in range(s):
                    acc += h_try * a[s, r] * k[r, i]
                ytmp[i] = acc
            field(q, b, ytmp, k[s])
        # Stage 7 is FSAL: k[6] = f(ynew) where ynew was the last ytmp.
        err = 0.0
        for i in range(m):
            ynew[i] = ytmp[i]
            e = 0.0
            for s in range(7):
                e += db[s] * k[s, i]
            e *= h_try
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = np.sqrt(err / m)
        if not np.isfinite(err):
            h = 0.5 * h_try
            rejected += 1
            last_rejected = True
            continue
        if err <= 1.0:
            fac = err ** expo / err_old ** beta
            fac = max(1.0 / fac_max, min(1.0 / fac_min, fac / safety))
            h_new = h_try / fac
            if last_rejected:
                h_new = min(h_new, h_try)
            err_old = max(err, 1e-4)
            t = target if landing else t + h_try
            for i in range(m):
                y[i] = ynew[i]
                k[0, i] = k[6, i]
            accepted += 1
            last_rejected = False
            # A landing step may be artificially short; keep the controller's proposal.
            h = max(h_new, h) if landing else h_new
            if landing:
                out[idx + 1, :] = y
                idx += 1
        else:
            fac = min(1.0 / fac_min, err ** expo / safety)
            h = h_try / fac
            rejected += 1
            last_rejected = True
    return OK, accepted, rejected

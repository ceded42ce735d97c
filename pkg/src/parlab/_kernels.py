"""Fused loops for the stepper's right-hand side.

Same stencil as :func:`parlab.operators.slice_operator`; the numpy version
stays the reference and the two are compared in the tests.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _deg(s2, gamma):
    if gamma == 0.0:
        return 1.0
    return s2 ** (0.5 * gamma)


@njit(cache=True)
def rate_1d(U, h, p, eps, gamma, q0):
    m = U.shape[0]
    drift = np.empty(m - 2)
    deg = np.empty(m - 2)
    ih2 = 1.0 / (h * h)
    for i in range(1, m - 1):
        g = (U[i + 1] - U[i - 1]) / (2.0 * h) + q0
        s2 = g * g + eps * eps
        uxx = (U[i + 1] + U[i - 1] - 2.0 * U[i]) * ih2
        # 1D: directional term e^2 uxx plus isotropic completion (1 - e^2) uxx
        plap = uxx + (p - 2.0) * uxx
        d = _deg(s2, gamma)
        deg[i - 1] = d
        drift[i - 1] = d * plap
    return drift, deg


@njit(cache=True)
def rate_2d(U, h, p, eps, gamma, q0, q1):
    m0, m1 = U.shape
    drift = np.empty((m0 - 2, m1 - 2))
    deg = np.empty((m0 - 2, m1 - 2))
    ih2 = 1.0 / (h * h)
    for i in range(1, m0 - 1):
        for j in range(1, m1 - 1):
            c = U[i, j]
            g0 = (U[i + 1, j] - U[i - 1, j]) / (2.0 * h) + q0
            g1 = (U[i, j + 1] - U[i, j - 1]) / (2.0 * h) + q1
            s2 = g0 * g0 + g1 * g1 + eps * eps
            lap = (U[i + 1, j] + U[i - 1, j] + U[i, j + 1] + U[i, j - 1] - 4.0 * c) * ih2
            plap = lap
            if p != 2.0:
                if s2 > 0:
                    r = 1.0 / np.sqrt(s2)
                    e0 = g0 * r
                    e1 = g1 * r
                else:
                    e0 = 0.0
                    e1 = 0.0
                a0m = 0.5 * e0 * (e0 - 1.0)
                a00 = 1.0 - e0 * e0
                a0p = 0.5 * e0 * (e0 + 1.0)
                a1m = 0.5 * e1 * (e1 - 1.0)
                a10 = 1.0 - e1 * e1
                a1p = 0.5 * e1 * (e1 + 1.0)
                pair = (2.0 * a00 * a10 - 2.0) * c
                pair += a0m * a1m * (U[i - 1, j - 1] + U[i + 1, j + 1])
                pair += a0m * a10 * (U[i - 1, j] + U[i + 1, j])
                pair += a0m * a1p * (U[i - 1, j + 1] + U[i + 1, j - 1])
                pair += a00 * a1m * (U[i, j - 1] + U[i, j + 1])
                pair += a00 * a1p * (U[i, j + 1] + U[i, j - 1])
                pair += a0p * a1m * (U[i + 1, j - 1] + U[i - 1, j + 1])
                pair += a0p * a10 * (U[i + 1, j] + U[i - 1, j])
                pair += a0p * a1p * (U[i + 1, j + 1] + U[i - 1, j - 1])
                e2 = e0 * e0 + e1 * e1
                plap = lap + (p - 2.0) * (pair * ih2 + 0.5 * (1.0 - e2) * lap)
            d = _deg(s2, gamma)
            deg[i - 1, j - 1] = d
            drift[i - 1, j - 1] = d * plap
    return drift, deg


def drift(U, h, params):
    """``(|Du|^gamma Delta_p^N u, |Du|^gamma)`` at interior nodes."""
    q = params.shift
    U = np.ascontiguousarray(U, dtype=np.float64)
    if U.ndim == 1:
        return rate_1d(U, float(h), float(params.p), float(params.eps),
                       float(params.gamma), float(q[0]))
    return rate_2d(U, float(h), float(params.p), float(params.eps),
                   float(params.gamma), float(q[0]), float(q[1]))




@njit(cache=True)
def _march(U, ndim, h, p, eps, gamma, q0, q1, f, cfl, t, target, bmax, min_dt, slack):
    """Forward Euler from ``t`` to ``target`` with frozen boundary values.

    ``U`` and ``f`` are 2D; a 1D problem is passed as a single column.
    Returns ``(U, dts, margins, status)``; status 1 flags a max-principle
    violation and 2 a time step below ``min_dt``.
    """
    width = 2.0 * (ndim + abs(p - 2.0))
    fmax = np.max(np.abs(f)) if f.size else 0.0
    dts = np.empty(64)
    margins = np.empty(64)
    k = 0
    while t < target:
        if ndim == 1:
            dr1, dg1 = rate_1d(U[:, 0], h, p, eps, gamma, q0)
            maxdeg = np.max(dg1)
        else:
            dr2, dg2 = rate_2d(U, h, p, eps, gamma, q0, q1)
            maxdeg = np.max(dg2)
        if maxdeg == 0.0:
            dt = h * h
        else:
            dt = cfl * h * h / (width * maxdeg)
            if dt < min_dt:
                return U, dts[:k], margins[:k], 2
        last = dt >= target - t - 1e-12 * max(1.0, abs(target))
        if last:
            dt = target - t
        bound = max(np.max(np.abs(U)), bmax) + dt * fmax
        new = U.copy()
        if ndim == 1:
            new[1:-1, 0] = U[1:-1, 0] + dt * (dr1 + f[:, 0])
        else:
            new[1:-1, 1:-1] = U[1:-1, 1:-1] + dt * (dr2 + f)
        margin = bound - np.max(np.abs(new))
        if k == dts.size:
            dts = np.concatenate((dts, np.empty(k)))
            margins = np.concatenate((margins, np.empty(k)))
        dts[k] = dt
        margins[k] = margin
        k += 1
        if margin < -slack:
            return new, dts[:k], margins[:k], 1
        U = new
        t = target if last else t + dt
    return U, dts[:k], margins[:k], 0


def march(U, h, params, f, cfl, t, target, bmax, min_dt, slack):
    """Steps from ``t`` to ``target``; see :func:`_march`."""
    U = np.asarray(U, dtype=np.float64)
    shape = U.shape
    f = np.broadcast_to(f, tuple(m - 2 for m in shape))
    if U.ndim == 1:
        U2, f2 = U.reshape(-1, 1), np.reshape(f, (-1, 1))
    else:
        U2, f2 = U, f
    q = params.shift
    q1 = float(q[1]) if U.ndim == 2 else 0.0
    out, dts, margins, status = _march(
        np.ascontiguousarray(U2), U.ndim, float(h), float(params.p), float(params.eps),
        float(params.gamma), float(q[0]), q1, np.ascontiguousarray(f2, dtype=np.float64),
        float(cfl), float(t), float(target), float(bmax), float(min_dt), float(slack))
    return out.reshape(shape), dts, margins, status

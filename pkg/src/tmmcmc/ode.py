"""Adaptive embedded Runge-Kutta integration.

A Dormand-Prince 5(4) pair with PI-free step control, compiled with numba
when available so that likelihoods needing thousands of trajectory solves
stay cheap. The integrator returns the solution at requested output times
together with a status flag (0 = ok, 1 = step underflow, 2 = non-finite
state, 3 = step budget exhausted).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    ]
)
_B5 = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
_B4 = np.array(
    [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ]
)
_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0])


@njit(cache=True)
def _integrate_dp45(rhs, y0, params, t_eval, rtol, atol, max_steps):
    n = y0.shape[0]
    n_out = t_eval.shape[0]
    out = np.empty((n_out, n))
    t = t_eval[0]
    y = y0.copy()
    out_idx = 0
    if t_eval[0] == t:
        out[0] = y
        out_idx = 1
    t_end = t_eval[n_out - 1]
    h = (t_end - t) * 1e-3
    if h <= 0.0:
        return out, 0
    k = np.empty((7, n))
    steps = 0
    while t < t_end:
        if out_idx < n_out and t + h > t_eval[out_idx]:
            h_try = t_eval[out_idx] - t
        else:
            h_try = h
        if h_try < 1e-14 * max(abs(t), 1.0):
            return out, 1
        k[0] = rhs(t, y, params)
        for s in range(1, 6):
            ys = y.copy()
            for j in range(s):
                ys += h_try * _A[s, j] * k[j]
            k[s] = rhs(t + _C[s] * h_try, ys, params)
        y5 = y.copy()
        for j in range(6):
            y5 += h_try * _B5[j] * k[j]
        k[6] = rhs(t + h_try, y5, params)
        err = 0.0
        for i in range(n):
            y4_i = y[i]
            for j in range(7):
                y4_i += h_try * _B4[j] * k[j, i]
            scale = atol + rtol * max(abs(y[i]), abs(y5[i]))
            e = (y5[i] - y4_i) / scale
            err += e * e
        err = np.sqrt(err / n)
        if not np.isfinite(err):
            return out, 2
        if err <= 1.0:
            t = t + h_try
            y = y5
            if not np.isfinite(y).all():
                return out, 2
            while out_idx < n_out and t >= t_eval[out_idx] - 1e-12 * max(abs(t), 1.0):
                out[out_idx] = y
                out_idx += 1
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
            h = h_try * factor
        else:
            h = h_try * min(1.0, max(0.2, 0.9 * err ** (-0.2)))
        steps += 1
        if steps >= max_steps:
            return out, 3
    return out, 0


def integrate(rhs, y0, params, t_eval, rtol=1e-8, atol=1e-10, max_steps=1_000_000):
    """Integrate ``dy/dt = rhs(t, y, params)`` and report the state at the
    sorted output times ``t_eval`` (the first entry is the initial time).

    ``rhs`` must be numba-compiled when numba is present.
    """
    y0 = np.asarray(y0, dtype=float)
    t_eval = np.asarray(t_eval, dtype=float)
    params = np.asarray(params, dtype=float)
    return _integrate_dp45(rhs, y0, params, t_eval, float(rtol), float(atol), max_steps)

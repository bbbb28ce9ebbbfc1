"""Hot kernels with an optional numba path.

Two kernels dominate run time: cubic Hermite evaluation of the stored
trajectory and the integrand of the memory-energy quadrature.  Both have a
pure-numpy implementation and a numba one with identical semantics.  Set
``VISCODELAY_DISABLE_NUMBA=1`` to force numpy (also used automatically when
numba cannot be imported).
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def _numba_requested():
    flag = os.environ.get("VISCODELAY_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()


# ---------------------------------------------------------------- numpy ---

def _locate(tb, q):
    idx = np.searchsorted(tb, q, side="right") - 1
    return np.clip(idx, 0, len(tb) - 2)


def hermite_numpy(tb, yb, db, q):
    """Cubic Hermite interpolant of rows ``yb`` (derivatives ``db``) at ``q``.

    Queries past either end use the nearest interval's cubic, which is how
    the integrator extrapolates for its predictor.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    i = _locate(tb, q)
    h = tb[i + 1] - tb[i]
    x = ((q - tb[i]) / h)[:, None]
    hh = h[:, None]
    x2 = x * x
    h00 = (1.0 + 2.0 * x) * (1.0 - x) ** 2
    h10 = x * (1.0 - x) ** 2
    h01 = x2 * (3.0 - 2.0 * x)
    h11 = x2 * (x - 1.0)
    return (h00 * yb[i] + h10 * hh * db[i]
            + h01 * yb[i + 1] + h11 * hh * db[i + 1])


def eta_integrand_numpy(tb, ub, vb, now, u_now, lam, weights, rates, s):
    """beta(s) * sum_k lam_k (u_now_k - u_k(now - s))**2 on buffer nodes."""
    past = hermite_numpy(tb, ub, vb, now - s)
    diff = u_now[None, :] - past
    beta = np.exp(-np.outer(s, rates)) @ weights
    return beta * ((diff * diff) @ lam)


# ---------------------------------------------------------------- numba ---

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _locate_one(tb, x):
        lo = 0
        hi = tb.shape[0] - 1
        if x <= tb[0]:
            return 0
        if x >= tb[hi]:
            return hi - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tb[mid] <= x:
                lo = mid
            else:
                hi = mid
        return lo

    @numba.njit(cache=True)
    def _hermite_kernel(tb, yb, db, q, out):
        n = yb.shape[1]
        for m in range(q.shape[0]):
            i = _locate_one(tb, q[m])
            h = tb[i + 1] - tb[i]
            x = (q[m] - tb[i]) / h
            om = 1.0 - x
            h00 = (1.0 + 2.0 * x) * om * om
            h10 = x * om * om * h
            h01 = x * x * (3.0 - 2.0 * x)
            h11 = x * x * (x - 1.0) * h
            for k in range(n):
                out[m, k] = (h00 * yb[i, k] + h10 * db[i, k]
                             + h01 * yb[i + 1, k] + h11 * db[i + 1, k])

    @numba.njit(cache=True)
    def _eta_kernel(tb, ub, vb, now, u_now, lam, weights, rates, s, out):
        n = ub.shape[1]
        nterms = weights.shape[0]
        for m in range(s.shape[0]):
            t = now - s[m]
            i = _locate_one(tb, t)
            h = tb[i + 1] - tb[i]
            x = (t - tb[i]) / h
            om = 1.0 - x
            h00 = (1.0 + 2.0 * x) * om * om
            h10 = x * om * om * h
            h01 = x * x * (3.0 - 2.0 * x)
            h11 = x * x * (x - 1.0) * h
            acc = 0.0
            for k in range(n):
                past = (h00 * ub[i, k] + h10 * vb[i, k]
                        + h01 * ub[i + 1, k] + h11 * vb[i + 1, k])
                d = u_now[k] - past
                acc += lam[k] * d * d
            beta = 0.0
            for j in range(nterms):
                beta += weights[j] * np.exp(-rates[j] * s[m])
            out[m] = beta * acc

    def hermite_numba(tb, yb, db, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty((q.shape[0], yb.shape[1]))
        _hermite_kernel(tb, yb, db, q, out)
        return out

    def eta_integrand_numba(tb, ub, vb, now, u_now, lam, weights, rates, s):
        out = np.empty(s.shape[0])
        _eta_kernel(tb, ub, vb, float(now), u_now, lam, weights, rates, s, out)
        return out

else:  # pragma: no cover
    hermite_numba = None
    eta_integrand_numba = None


if USE_NUMBA:
    hermite = hermite_numba
    eta_integrand = eta_integrand_numba
else:
    hermite = hermite_numpy
    eta_integrand = eta_integrand_numpy


def backend():
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"

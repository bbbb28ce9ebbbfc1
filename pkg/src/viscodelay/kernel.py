"""Prony-sum memory kernels, their ODE reduction and memory-energy quadrature."""

from dataclasses import dataclass
import math

import numpy as np

from . import _accel
from .errors import (EmptyKernel, HistoryGap, MassNotLessThanOne, NonPositiveTerm,
                     ShapeMismatch, UnsupportedHistoryFamily)
from .delay import InitialHistory

CUTOFF_FACTOR = 40.0


@dataclass(frozen=True)
class KernelSpec:
    """beta(s) = sum_j b_j exp(-delta_j s)."""

    terms: tuple

    @property
    def n_terms(self):
        return len(self.terms)

    @property
    def weights(self):
        return np.array([w for w, _ in self.terms], dtype=float)

    @property
    def rates(self):
        return np.array([r for _, r in self.terms], dtype=float)

    @property
    def beta0(self):
        return float(sum(w for w, _ in self.terms))

    @property
    def beta_tilde(self):
        return float(sum(w / r for w, r in self.terms))

    @property
    def delta(self):
        return float(min(r for _, r in self.terms)) if self.terms else math.inf

    @property
    def s_cut(self):
        return CUTOFF_FACTOR / self.delta if self.terms else 0.0

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.zeros_like(s)
        return np.exp(-np.multiply.outer(s, self.rates)) @ self.weights

    def beta_prime(self, s):
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.zeros_like(s)
        return -np.exp(-np.multiply.outer(s, self.rates)) @ (self.weights * self.rates)

    def tail_mass(self, s):
        """Integral of beta over [s, inf)."""
        if not self.terms:
            return 0.0
        return float(np.sum(self.weights / self.rates * np.exp(-self.rates * s)))

    def hypotheses(self, s_max=None, n=2001):
        """Verdicts for the four kernel conditions; values are (ok, detail)."""
        out = {}
        out["integrable"] = (True, "finite exponential sum")
        if not self.terms:
            out["positive_origin"] = (False, "beta(0) = 0 (no memory)")
            out["mass_below_one"] = (True, "beta_tilde = 0")
            out["decay_floor"] = (False, "no positive decay floor")
            return out
        out["positive_origin"] = (self.beta0 > 0, f"beta0 = {self.beta0:.17g}")
        out["mass_below_one"] = (self.beta_tilde < 1,
                                 f"beta_tilde = {self.beta_tilde:.17g}")
        s = np.linspace(0.0, s_max if s_max is not None else self.s_cut, n)
        slack = float(np.max(self.beta_prime(s) + self.delta * self.beta(s)))
        # identically <= 0 for positive terms; allow round-off in the grid check
        ok = (all(w > 0 and r > 0 for w, r in self.terms)
              and slack <= 1e-13 * self.beta0 * self.delta)
        out["decay_floor"] = (ok, f"delta = {self.delta:.17g}, "
                                  f"max(beta' + delta beta) = {slack:.3g}")
        return out


def make_kernel(terms):
    """Validate Prony terms given as (weight, rate) pairs or {weight, rate} maps."""
    parsed = []
    for term in terms:
        if isinstance(term, dict):
            w, r = term["weight"], term["rate"]
        else:
            w, r = term
        w, r = float(w), float(r)
        if not (math.isfinite(w) and math.isfinite(r)):
            raise NonPositiveTerm("kernel terms must be finite")
        if w <= 0 or r <= 0:
            raise NonPositiveTerm(f"kernel term ({w:g}, {r:g}) must have positive weight and rate")
        parsed.append((w, r))
    if not parsed:
        raise EmptyKernel("kernel needs at least one term")
    spec = KernelSpec(tuple(parsed))
    if spec.beta_tilde >= 1:
        raise MassNotLessThanOne(f"kernel mass beta_tilde = {spec.beta_tilde:g} is not below 1")
    return spec


def no_memory():
    """The zero kernel; fails the positivity condition but is handy for checks."""
    return KernelSpec(())


def memory_rhs(kernel, z, u):
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if z.ndim != 2 or u.ndim != 1 or z.shape != (kernel.n_terms, u.shape[0]):
        raise ShapeMismatch(f"z shape {z.shape} does not match ({kernel.n_terms}, {u.shape})")
    return kernel.weights[:, None] * u[None, :] - kernel.rates[:, None] * z


# ------------------------------------------------------------ quadrature ---

def refined_simpson(segments, f, n0=400, rtol=1e-8, atol=0.0, max_doublings=12):
    """Composite Simpson over several segments, doubling until converged.

    ``f`` maps a 1-D array of nodes to an array whose leading axis matches.
    Trapezoid sums are reused between levels so each doubling only evaluates
    the new midpoints.  Returns (value, intervals_per_unit_of_last_level).
    """
    segments = [(float(a), float(b)) for a, b in segments if b > a]
    if not segments:
        return 0.0, 0
    total = sum(b - a for a, b in segments)
    counts = [max(2, 2 * int(math.ceil(n0 * (b - a) / total / 2))) for a, b in segments]
    trap, coarse, steps = [], [], []
    for (a, b), n in zip(segments, counts):
        x = np.linspace(a, b, n + 1)
        y = np.asarray(f(x))
        h = (b - a) / n
        w = np.full(n + 1, h)
        w[0] = w[-1] = h / 2
        t_fine = np.tensordot(w, y, axes=1)
        wc = np.full(n // 2 + 1, 2 * h)
        wc[0] = wc[-1] = h
        t_coarse = np.tensordot(wc, y[::2], axes=1)
        trap.append(t_fine)
        coarse.append(t_coarse)
        steps.append(h)
    simpson = sum((4 * t - c) / 3 for t, c in zip(trap, coarse))
    for level in range(max_doublings):
        new_trap = []
        for i, ((a, b), t) in enumerate(zip(segments, trap)):
            h = steps[i] / 2
            mid = a + h * (2 * np.arange(counts[i]) + 1)
            new_trap.append(t / 2 + h * np.sum(np.asarray(f(mid)), axis=0))
            steps[i] = h
            counts[i] *= 2
        new_simpson = sum((4 * tn - to) / 3 for tn, to in zip(new_trap, trap))
        change = np.max(np.abs(new_simpson - simpson))
        scale = np.max(np.abs(new_simpson))
        trap = new_trap
        simpson = new_simpson
        if change <= rtol * scale + atol:
            break
    return simpson, counts


def init_memory_state(kernel, history, rtol=1e-12):
    """z_j(0) = integral of b_j exp(-delta_j s) u0(-s) over s >= 0."""
    if not isinstance(history, InitialHistory):
        raise UnsupportedHistoryFamily(f"unsupported history object {type(history).__name__}")
    n = history.n_modes
    if not kernel.n_terms:
        return np.zeros((0, n))
    b, d = kernel.weights, kernel.rates
    T = history.flat_from
    tail = (b / d * np.exp(-d * T))[:, None] * history.u_flat[None, :]
    if T == 0.0:
        return tail

    def f(s):
        decay = b[None, :] * np.exp(-np.outer(s, d))  # (m, J)
        u = history.u0(-s)  # (m, n)
        return decay[:, :, None] * u[:, None, :]

    body, _ = refined_simpson([(0.0, T)], f, rtol=rtol, atol=1e-300)
    return body + tail


def eta_energy(kernel, lam, now, u_now, buffer, history=None, s_cut=None, rtol=1e-8):
    """Half the beta-weighted integral of |A^(1/2)(u(now) - u(now - s))|^2.

    The stored trajectory supplies s up to ``now - buffer.t_first``; the
    initial history supplies the rest.  Beyond ``s_cut`` (or beyond the
    point where the history is flat, whichever comes first) the integrand's
    displacement is frozen and the kernel tail is integrated exactly.
    """
    if not kernel.n_terms:
        return 0.0
    lam = np.asarray(lam, dtype=float)
    u_now = np.asarray(u_now, dtype=float)
    history = history if history is not None else buffer.initial
    if s_cut is None:
        s_cut = kernel.s_cut
    s_buf = now - buffer.t_first
    if history is not None:
        s_flat = now + history.flat_from
        s_q = min(s_cut, s_flat)
    else:
        s_q = s_cut
    if s_q > s_buf and buffer.t_first > 0.0:
        raise HistoryGap(f"memory window reaches t={now - s_q:.6g} before retained buffer start")
    if s_q > s_buf and history is None:
        raise HistoryGap("memory window needs an initial history")

    w, r = kernel.weights, kernel.rates
    tb, ub, vb = buffer.t, buffer.u, buffer.v

    def f_buffer(s):
        return _accel.eta_integrand(tb, ub, vb, now, u_now, lam, w, r, s)

    def f_history(s):
        diff = u_now[None, :] - history.u0(now - s)
        return kernel.beta(s) * ((diff * diff) @ lam)

    if len(buffer) < 2:
        segments = []
    else:
        segments = [(0.0, min(s_buf, s_q))]
    if s_q > s_buf:
        segments.append((max(s_buf, 0.0), s_q))

    def f(s):
        out = np.empty(s.shape[0])
        if len(buffer) >= 2:
            in_buf = s <= s_buf
        else:
            in_buf = np.zeros(s.shape[0], dtype=bool)
        if np.any(in_buf):
            out[in_buf] = f_buffer(s[in_buf])
        if np.any(~in_buf):
            out[~in_buf] = f_history(s[~in_buf])
        return out

    value, _ = refined_simpson(segments, f, rtol=rtol, atol=1e-300)
    t_tail = now - s_q
    if t_tail >= buffer.t_first and len(buffer):
        u_tail = buffer.position(t_tail)[0]
    else:
        u_tail = history.u0(t_tail)[0]
    diff = u_now - u_tail
    value = float(value) + kernel.tail_mass(s_q) * float(np.dot(lam, diff * diff))
    return max(0.5 * value, 0.0)

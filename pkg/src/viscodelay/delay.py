"""Delays, feedback gains, initial histories and the dense-output history buffer."""

from dataclasses import dataclass
import math

import numpy as np

from . import _accel
from .errors import (HistoryGap, InconsistentConfig, InfeasibleHypothesis,
                     InvalidDelay, InvalidGain, UnboundedBudget,
                     UnsupportedHistoryFamily)

DELAY_FAMILIES = ("constant", "sinusoidal", "piecewise-linear")
GAIN_FAMILIES = ("constant", "exponential-decay", "periodic-pulses",
                 "sign-alternating")
POSITION_FAMILIES = ("constant", "ramp")
VELOCITY_FAMILIES = ("constant", "sinusoidal", "consistent")


def _num(params, key, default=None):
    if key not in params:
        if default is None:
            raise KeyError(key)
        return float(default)
    value = float(params[key])
    if not math.isfinite(value):
        raise ValueError(f"parameter {key!r} must be finite")
    return value


# ----------------------------------------------------------------- delay ---

@dataclass(frozen=True, eq=False)
class DelaySpec:
    """Time-varying delay tau(t) with a declared upper bound ``tau_bar``."""

    family: str
    params: dict
    tau_bar: float

    def tau(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.family == "constant":
            out = np.full_like(t, p["value"])
        elif self.family == "sinusoidal":
            out = p["mean"] + p["amplitude"] * np.sin(p["frequency"] * t + p["phase"])
        else:
            out = np.interp(t, p["times"], p["values"])
        return out if out.ndim else float(out)

    @property
    def tau_min(self):
        """Lower bound of tau over t >= 0 (0 means the delay may vanish)."""
        p = self.params
        if self.family == "constant":
            return p["value"]
        if self.family == "sinusoidal":
            return p["mean"] - abs(p["amplitude"])
        return float(np.min(p["values"]))

    @property
    def tau_max(self):
        p = self.params
        if self.family == "constant":
            return p["value"]
        if self.family == "sinusoidal":
            return p["mean"] + abs(p["amplitude"])
        return float(np.max(p["values"]))

    def audit(self, horizon, n=20001):
        """Check 0 <= tau <= tau_bar on a uniform grid; returns (ok, min, max)."""
        grid = np.linspace(0.0, horizon, n)
        vals = self.tau(grid)
        lo, hi = float(vals.min()), float(vals.max())
        return (lo >= 0.0 and hi <= self.tau_bar * (1 + 1e-14)), lo, hi


def make_delay(family, params, tau_bar):
    tau_bar = float(tau_bar)
    if not (math.isfinite(tau_bar) and tau_bar >= 0):
        raise InvalidDelay("tau_bar must be finite and non-negative")
    params = dict(params or {})
    try:
        if family == "constant":
            p = {"value": _num(params, "value")}
        elif family == "sinusoidal":
            p = {"mean": _num(params, "mean"),
                 "amplitude": _num(params, "amplitude"),
                 "frequency": _num(params, "frequency"),
                 "phase": _num(params, "phase", 0.0)}
        elif family == "piecewise-linear":
            times = np.asarray(params["times"], dtype=float)
            values = np.asarray(params["values"], dtype=float)
            if times.ndim != 1 or times.shape != values.shape or times.size < 1:
                raise InvalidDelay("piecewise-linear delay needs matching knot lists")
            if np.any(np.diff(times) <= 0):
                raise InvalidDelay("piecewise-linear knots must be strictly increasing")
            p = {"times": times, "values": values}
        else:
            raise InvalidDelay(f"unknown delay family {family!r}")
    except KeyError as exc:
        raise InvalidDelay(f"delay family {family!r} missing parameter {exc}") from None
    spec = DelaySpec(family, p, tau_bar)
    if spec.tau_min < 0 or spec.tau_max > tau_bar * (1 + 1e-14):
        raise InvalidDelay(
            f"delay range [{spec.tau_min:g}, {spec.tau_max:g}] not inside [0, {tau_bar:g}]")
    return spec


# ------------------------------------------------------------------ gain ---

@dataclass(frozen=True, eq=False)
class GainSpec:
    """Feedback gain k(t) with closed-form antiderivative of |k|.

    For t < 0 the constant and periodic families keep their formula; the
    exponential-decay family is switched on at t = 0.
    """

    family: str
    params: dict

    @property
    def amplitude(self):
        return abs(self.params["k0"])

    def k(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        k0 = p["k0"]
        if self.family == "constant":
            out = np.full_like(t, k0)
        elif self.family == "exponential-decay":
            out = np.where(t >= 0, k0 * np.exp(-p["rate"] * np.maximum(t, 0.0)), 0.0)
        elif self.family == "periodic-pulses":
            phase = np.mod(t, p["period"])
            out = np.where(phase < p["width"], k0, 0.0)
        else:
            out = k0 * np.cos(2 * np.pi * t / p["period"])
        return out if out.ndim else float(out)

    def abs_integral(self, t):
        """F(t) = signed integral of |k| from 0 to t."""
        t = np.asarray(t, dtype=float)
        p = self.params
        a = self.amplitude
        if self.family == "constant":
            out = a * t
        elif self.family == "exponential-decay":
            r = p["rate"]
            out = np.where(t > 0, a * -np.expm1(-r * np.maximum(t, 0.0)) / r, 0.0)
        elif self.family == "periodic-pulses":
            P, w = p["period"], p["width"]
            n = np.floor(t / P)
            out = a * (n * w + np.minimum(t - n * P, w))
        else:
            q = p["period"] / 2
            n = np.floor(t / q)
            r = t - n * q
            s = np.sin(np.pi * r / q)
            part = np.where(r <= q / 2, s, 2.0 - s)
            out = a * (q / np.pi) * (2 * n + part)
        return out if out.ndim else float(out)

    def window_integral(self, lo, hi):
        return self.abs_integral(hi) - self.abs_integral(lo)

    @property
    def mean_rate(self):
        """Asymptotic slope of F(t)."""
        p = self.params
        if self.family == "constant":
            return self.amplitude
        if self.family == "exponential-decay":
            return 0.0
        if self.family == "periodic-pulses":
            return self.amplitude * p["width"] / p["period"]
        return self.amplitude * 2 / np.pi

    def excess(self):
        """sup over t >= 0 of F(t) - mean_rate * t."""
        p = self.params
        a = self.amplitude
        if self.family == "constant":
            return 0.0
        if self.family == "exponential-decay":
            return a / p["rate"]
        if self.family == "periodic-pulses":
            w, P = p["width"], p["period"]
            return a * w * (1 - w / P)
        q = p["period"] / 2
        ts = (q / np.pi) * math.acos(2 / np.pi)
        return a * ((q / np.pi) * math.sin(np.pi * ts / q) - (2 / np.pi) * ts)

    def window_sup(self, length):
        """sup over t >= 0 of the integral of |k| on [t - length, t]."""
        p = self.params
        a = self.amplitude
        length = float(length)
        if self.family == "constant":
            return a * length
        if self.family == "exponential-decay":
            return float(self.abs_integral(length))
        if self.family == "periodic-pulses":
            P, w = p["period"], p["width"]
            m = math.floor(length / P)
            r = length - m * P
            return a * (m * w + min(r, w))
        q = p["period"] / 2
        m = math.floor(length / q)
        r = length - m * q
        return a * (2 * q / np.pi) * (m + math.sin(np.pi * r / (2 * q)))

    def sup_abs(self, lo, hi):
        """sup of |k| over [lo, hi]."""
        p = self.params
        a = self.amplitude
        if a == 0.0:
            return 0.0
        if self.family == "constant":
            return a
        if self.family == "exponential-decay":
            if hi < 0:
                return 0.0
            return a * math.exp(-p["rate"] * max(lo, 0.0))
        if self.family == "periodic-pulses":
            P, w = p["period"], p["width"]
            n = math.floor(lo / P)
            start = lo - n * P
            if start < w or (n + 1) * P <= hi:
                return a
            return 0.0
        q = p["period"] / 2
        if math.floor(hi / q) > math.floor(lo / q) or math.isclose(lo / q, round(lo / q)):
            return a
        return max(abs(self.k(lo)), abs(self.k(hi)))

    def breakpoints(self, lo, hi):
        """Points in (lo, hi) where k jumps."""
        p = self.params
        if self.family == "exponential-decay":
            return [0.0] if lo < 0.0 < hi else []
        if self.family == "periodic-pulses":
            P, w = p["period"], p["width"]
            pts = []
            n = math.floor(lo / P)
            while n * P < hi:
                for x in (n * P, n * P + w):
                    if lo < x < hi:
                        pts.append(x)
                n += 1
            return pts
        return []


def make_gain(family, params):
    params = dict(params or {})
    try:
        if family == "constant":
            p = {"k0": _num(params, "k0")}
        elif family == "exponential-decay":
            p = {"k0": _num(params, "k0"), "rate": _num(params, "rate")}
            if p["rate"] <= 0:
                raise UnboundedBudget("exponential-decay gain needs rate > 0")
        elif family == "periodic-pulses":
            p = {"k0": _num(params, "k0"), "period": _num(params, "period"),
                 "width": _num(params, "width")}
            if p["period"] <= 0 or not (0 < p["width"] <= p["period"]):
                raise InvalidGain("periodic-pulses needs 0 < width <= period")
        elif family == "sign-alternating":
            p = {"k0": _num(params, "k0"), "period": _num(params, "period")}
            if p["period"] <= 0:
                raise InvalidGain("sign-alternating needs period > 0")
        else:
            raise InvalidGain(f"unknown gain family {family!r}")
    except KeyError as exc:
        raise InvalidGain(f"gain family {family!r} missing parameter {exc}") from None
    return GainSpec(family, p)


def gain_budget(gain, tau_bar):
    """K = sup over t of the integral of |k| on [t - tau_bar, t]."""
    K = gain.window_sup(tau_bar)
    if not math.isfinite(K):
        raise UnboundedBudget("windowed gain integral is not bounded")
    return float(K)


def sampled_window_sup(gain, length, horizon, n=200001):
    """Grid estimate of the window sup, used as an independent check."""
    t = np.linspace(0.0, horizon, n)
    return float(np.max(gain.window_integral(t - length, t)))


@dataclass(frozen=True)
class GainGrowth:
    gamma: float
    omega_prime: float
    coefficient: float


def fit_gain_growth(gain, b, M, omega, tau_bar, horizon, n_grid=20001):
    """Smallest slope, then smallest offset, with c*F(t) <= gamma + omega' t.

    Here c = b^2 M exp(omega tau_bar).  The slope is the asymptotic rate of
    F, the offset its closed-form excess, enlarged if the audit grid on
    [0, horizon] demands more.
    """
    c = b * b * M * math.exp(omega * tau_bar)
    slope = c * gain.mean_rate
    if slope >= omega:
        raise InfeasibleHypothesis(
            f"gain growth slope {slope:.6g} is not below omega = {omega:.6g}")
    gamma = c * gain.excess()
    grid = np.linspace(0.0, horizon, n_grid)
    extra = np.asarray(gain.breakpoints(0.0, horizon), dtype=float)
    grid = np.union1d(grid, extra)
    need = float(np.max(c * gain.abs_integral(grid) - slope * grid))
    gamma = max(gamma, need, 0.0)
    return GainGrowth(gamma=gamma, omega_prime=slope, coefficient=c)


# --------------------------------------------------------------- history ---

@dataclass(frozen=True, eq=False)
class InitialHistory:
    """Position history u0 on (-inf, 0] and velocity history g on [-tau_bar, 0]."""

    position_family: str
    position: np.ndarray
    slope: float
    t_hist: float
    velocity_family: str
    velocity: np.ndarray
    frequency: float
    tau_bar: float

    @property
    def n_modes(self):
        return self.position.shape[0]

    def u0(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.position_family == "constant":
            prof = np.ones_like(t)
        else:
            prof = 1.0 + self.slope * np.maximum(np.minimum(t, 0.0), -self.t_hist)
        return prof[:, None] * self.position[None, :]

    def g(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.velocity_family == "constant":
            prof = np.ones_like(s)
            vec = self.velocity
        elif self.velocity_family == "sinusoidal":
            prof = np.cos(self.frequency * s)
            vec = self.velocity
        else:
            vec = self.position
            if self.position_family == "constant":
                prof = np.zeros_like(s)
            else:
                prof = np.where(s >= -self.t_hist, self.slope, 0.0)
        return prof[:, None] * vec[None, :]

    @property
    def u_initial(self):
        return self.u0(0.0)[0]

    @property
    def u1(self):
        return self.g(0.0)[0]

    @property
    def u_flat(self):
        """Constant value taken for t <= -T_hist."""
        return self.u0(-self.t_hist - 1.0)[0]

    @property
    def flat_from(self):
        """The position history is constant on (-inf, -flat_from]."""
        return self.t_hist if self.position_family == "ramp" else 0.0

    def max_velocity_norm(self):
        if self.tau_bar == 0.0:
            return float(np.linalg.norm(self.u1))
        s = np.linspace(-self.tau_bar, 0.0, 4001)
        return float(np.max(np.linalg.norm(self.g(s), axis=1)))

    def scaled(self, factor):
        return InitialHistory(self.position_family, self.position * factor, self.slope,
                              self.t_hist, self.velocity_family, self.velocity * factor,
                              self.frequency, self.tau_bar)


def make_history(n_modes, position_family, position, velocity_family, velocity=None,
                 slope=0.0, t_hist=0.0, frequency=0.0, tau_bar=0.0, amplitude=1.0):
    """Build an InitialHistory, padding coefficient lists with zeros to ``n_modes``."""

    def pad(vec, name):
        arr = np.zeros(n_modes)
        vals = np.asarray(vec if vec is not None else [], dtype=float).ravel()
        if vals.size > n_modes:
            raise InconsistentConfig(f"{name} has more coefficients than modes")
        if not np.all(np.isfinite(vals)):
            raise InconsistentConfig(f"{name} must be finite")
        arr[:vals.size] = vals
        return arr * float(amplitude)

    if position_family not in POSITION_FAMILIES:
        raise UnsupportedHistoryFamily(f"position family {position_family!r}")
    if velocity_family not in VELOCITY_FAMILIES:
        raise UnsupportedHistoryFamily(f"velocity family {velocity_family!r}")
    t_hist = float(t_hist)
    if position_family == "ramp":
        if t_hist <= 0:
            raise InconsistentConfig("ramp history needs t_hist > 0")
        if velocity_family == "consistent" and t_hist < tau_bar:
            raise InconsistentConfig(
                "consistent velocity needs t_hist >= tau_bar so that g is continuous")
    else:
        t_hist = 0.0
    return InitialHistory(position_family, pad(position, "position"), float(slope), t_hist,
                          velocity_family, pad(velocity, "velocity"), float(frequency),
                          float(tau_bar))


class HistoryBuffer:
    """Committed samples (t, u, v, a) with cubic Hermite dense output.

    Positions interpolate (u, v); velocities interpolate (v, a).  Samples
    older than ``retention`` behind the newest one are discarded when the
    storage compacts.  Lookups at t <= 0 before the first sample fall back
    to the initial history.
    """

    def __init__(self, n_modes, initial=None, retention=math.inf, capacity=1024):
        self.n_modes = n_modes
        self.initial = initial
        self.retention = float(retention)
        self._t = np.empty(capacity)
        self._u = np.empty((capacity, n_modes))
        self._v = np.empty((capacity, n_modes))
        self._a = np.empty((capacity, n_modes))
        self._lo = 0
        self._hi = 0

    def __len__(self):
        return self._hi - self._lo

    @property
    def t(self):
        return self._t[self._lo:self._hi]

    @property
    def u(self):
        return self._u[self._lo:self._hi]

    @property
    def v(self):
        return self._v[self._lo:self._hi]

    @property
    def a(self):
        return self._a[self._lo:self._hi]

    @property
    def t_first(self):
        return self._t[self._lo]

    @property
    def t_last(self):
        return self._t[self._hi - 1]

    def _compact(self):
        keep_from = self._lo
        if math.isfinite(self.retention) and len(self) > 2:
            cutoff = self.t_last - self.retention
            idx = int(np.searchsorted(self.t, cutoff, side="right")) - 1
            keep_from = self._lo + max(idx, 0)
        n = self._hi - keep_from
        cap = self._t.shape[0]
        if n > cap // 2:
            cap *= 2
            t = np.empty(cap)
            u = np.empty((cap, self.n_modes))
            v = np.empty((cap, self.n_modes))
            a = np.empty((cap, self.n_modes))
        else:
            t, u, v, a = self._t, self._u, self._v, self._a
        sl = slice(keep_from, self._hi)
        t[:n] = self._t[sl]
        u[:n] = self._u[sl]
        v[:n] = self._v[sl]
        a[:n] = self._a[sl]
        self._t, self._u, self._v, self._a = t, u, v, a
        self._lo, self._hi = 0, n

    def append(self, t, u, v, a):
        if len(self) and not t > self.t_last:
            raise ValueError("buffer times must be strictly increasing")
        if self._hi == self._t.shape[0]:
            self._compact()
        i = self._hi
        self._t[i] = t
        self._u[i] = u
        self._v[i] = v
        self._a[i] = a
        self._hi += 1

    def pop(self):
        if not len(self):
            raise IndexError("pop from empty buffer")
        self._hi -= 1

    def trim(self):
        """Drop samples older than the retention window."""
        if math.isfinite(self.retention) and len(self) > 2:
            cutoff = self.t_last - self.retention
            idx = int(np.searchsorted(self.t, cutoff, side="right")) - 1
            self._lo += max(idx, 0)

    def snapshot(self):
        other = HistoryBuffer(self.n_modes, self.initial, self.retention, max(len(self), 2))
        n = len(self)
        other._t[:n] = self.t
        other._u[:n] = self.u
        other._v[:n] = self.v
        other._a[:n] = self.a
        other._hi = n
        return other

    def _lookup(self, times, which, extrapolate):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if not len(self):
            raise HistoryGap("buffer is empty")
        out = np.empty((times.shape[0], self.n_modes))
        t0, t1 = self.t_first, self.t_last
        slack = 1e-12 * max(1.0, abs(t1))
        before = times < t0
        after = times > t1 + slack
        if np.any(after) and not extrapolate:
            raise HistoryGap(f"lookup at t={times[after].max():.17g} beyond last sample {t1:.17g}")
        if np.any(before):
            tb = times[before]
            if np.any(tb > 0.0) or self.initial is None:
                raise HistoryGap(f"lookup at t={tb.max():.17g} precedes retained buffer "
                                 f"start {t0:.17g}")
            out[before] = self.initial.u0(tb) if which == "u" else self.initial.g(tb)
        rest = ~before
        if np.any(rest):
            y, d = (self.u, self.v) if which == "u" else (self.v, self.a)
            if len(self) == 1:
                dt = times[rest] - t0
                out[rest] = y[0][None, :] + dt[:, None] * d[0][None, :]
            else:
                out[rest] = _accel.hermite(self.t, y, d, times[rest])
        return out

    def position(self, times, extrapolate=False):
        return self._lookup(times, "u", extrapolate)

    def velocity(self, times, extrapolate=False):
        return self._lookup(times, "v", extrapolate)


def delayed_velocity(buffer, history, t, delay):
    """v(t - tau(t)) and whether it came from extrapolation past the last sample."""
    arg = t - delay.tau(t)
    if arg <= 0.0 and (len(buffer) == 0 or arg < buffer.t_first or arg == 0.0):
        if history is None:
            raise HistoryGap("no initial history for lookup before t = 0")
        return history.g(arg)[0], False
    extrapolated = arg > buffer.t_last
    return buffer.velocity(arg, extrapolate=True)[0], bool(extrapolated)

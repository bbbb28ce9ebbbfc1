"""Energy functional, inequality audits, semigroup constants and the decay certificate."""

from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .delay import HistoryBuffer, fit_gain_growth, gain_budget
from .errors import InfeasibleHypothesis, NonPositiveEnergy, NotExponentiallyStable
from .kernel import eta_energy
from .operators import h_eval, h_inverse, lipschitz_L, psi_value, state_lipschitz

GRONWALL_TOL = 1e-6
LOWER_SLACK = 1e-9
DERIVATIVE_SLACK = 1e-4


# ---------------------------------------------------------------- energy ---

@dataclass(frozen=True)
class EnergySample:
    t: float
    E: float
    kinetic: float
    elastic: float
    minus_psi: float
    memory: float
    gain_window: float
    v_sq: float
    grad_sq: float
    bstar_window_max: float


def _simpson_nodes(a, b, h_target):
    n = max(2, 2 * int(math.ceil((b - a) / h_target / 2)))
    x = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3 * n)


def gain_window(model, t, buffer, step=None):
    """Half the windowed integral of |k| |B* v|^2 over [t - tau_bar, t] and the
    window max of |B* v|^2.  Simpson nodes are ``step`` apart (default dt)."""
    tau_bar = model.tau_bar
    G = model.feedback.gram
    history = model.history
    if tau_bar == 0.0 or model.gain.amplitude == 0.0:
        lo = t - tau_bar
        v_now = buffer.velocity(t)[0] if len(buffer) else history.g(0.0)[0]
        peak = float(v_now @ G @ v_now)
        if tau_bar > 0.0:
            x = np.linspace(lo, t, 257)
            vs = _velocities(buffer, history, x)
            peak = max(peak, float(np.max(np.einsum("ij,jk,ik->i", vs, G, vs))))
        return 0.0, peak
    lo = t - tau_bar
    cuts = [lo] + [p for p in model.gain.breakpoints(lo, t)]
    if lo < 0.0 < t:
        cuts.append(0.0)
    cuts = sorted(set(cuts)) + [t]
    h = model.integrator.dt if step is None else step
    total = 0.0
    peak = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        x, w = _simpson_nodes(a, b, h)
        vs = _velocities(buffer, history, x)
        q = np.einsum("ij,jk,ik->i", vs, G, vs)
        # evaluate |k| just inside the segment so jumps land on the right side
        xk = x.copy()
        xk[0] = np.nextafter(a, b)
        xk[-1] = np.nextafter(b, a)
        kk = np.abs(model.gain.k(xk))
        total += float(np.dot(w, kk * q))
        peak = max(peak, float(q.max()))
    return 0.5 * total, peak


def _velocities(buffer, history, x):
    out = np.empty((x.shape[0], history.n_modes))
    neg = x <= 0.0
    if len(buffer):
        neg &= x < buffer.t_first
    if np.any(neg):
        out[neg] = history.g(x[neg])
    if np.any(~neg):
        out[~neg] = buffer.velocity(x[~neg])
    return out


def energy(model, state, buffer, rtol=1e-8, window_step=None):
    """E at ``state.t`` with its components; the buffer must end at ``state.t``."""
    spec = model.spectrum
    beta_tilde = model.kernel.beta_tilde
    v_sq = float(np.dot(state.v, state.v))
    grad_sq = spec.grad_sq(state.u)
    kinetic = 0.5 * v_sq
    elastic = 0.5 * (1.0 - beta_tilde) * grad_sq
    minus_psi = -psi_value(model.nonlinearity, state.u)
    memory = eta_energy(model.kernel, spec.lam, state.t, state.u, buffer, model.history,
                        rtol=rtol)
    window, peak = gain_window(model, state.t, buffer, window_step)
    E = kinetic + elastic + minus_psi + memory + window
    return EnergySample(state.t, E, kinetic, elastic, minus_psi, memory, window,
                        v_sq, grad_sq, peak)


def initial_floor(model):
    """Half the largest squared velocity-history norm."""
    return 0.5 * model.history.max_velocity_norm() ** 2


def history_norm_sq(model, sample):
    """Squared history-space norm of (u, v, eta) from an energy sample."""
    return ((1.0 - model.kernel.beta_tilde) * sample.grad_sq + sample.v_sq
            + 2.0 * sample.memory)


# ---------------------------------------------------------------- audits ---

@dataclass
class AuditResult:
    name: str
    status: str  # pass | fail | skipped | hypothesis-not-met
    violations: int = 0
    times: list = field(default_factory=list)
    reason: str = ""
    worst_ratio: float = 0.0

    @property
    def flags(self):
        return self.violations

    def to_dict(self):
        return asdict(self)


@dataclass
class EnergyReport:
    t: np.ndarray
    E: np.ndarray
    calE: np.ndarray
    kinetic: np.ndarray
    elastic: np.ndarray
    minus_psi: np.ndarray
    memory: np.ndarray
    gain_window: np.ndarray
    v_sq: np.ndarray
    grad_sq: np.ndarray
    bstar_window_max: np.ndarray
    k_int: np.ndarray
    k_sup: np.ndarray
    b: float
    beta_tilde: float
    floor0: float
    audits: dict = field(default_factory=dict)
    lower_precondition: tuple = (False, "not evaluated")
    extras: dict = field(default_factory=dict)

    @property
    def quarter_sum(self):
        return 0.25 * (self.v_sq + (1 - self.beta_tilde) * self.grad_sq
                       + 2 * self.gain_window + 2 * self.memory)

    @property
    def flag_arrays(self):
        out = {}
        for name, res in self.audits.items():
            arr = np.zeros(self.t.shape[0], dtype=int)
            if res.times:
                idx = np.searchsorted(self.t, np.asarray(res.times))
                arr[np.clip(idx, 0, arr.size - 1)] = 1
            out[name] = arr
        return out

    def summary(self):
        out = {
            "samples": int(self.t.size),
            "t_end": float(self.t[-1]) if self.t.size else 0.0,
            "E0": float(self.E[0]) if self.t.size else 0.0,
            "E_end": float(self.E[-1]) if self.t.size else 0.0,
            "calE0": float(self.calE[0]) if self.t.size else 0.0,
            "calE_monotone": bool(np.all(np.diff(self.calE) >= 0)),
        }
        for name, res in self.audits.items():
            out[f"audit_{name}"] = res.status
            out[f"audit_{name}_violations"] = res.violations
        out.update(self.extras)
        return out


def build_report(model, samples):
    t = np.array([s.t for s in samples])
    E = np.array([s.E for s in samples])
    floor0 = initial_floor(model)
    calE = np.maximum.accumulate(np.maximum(E, floor0)) if t.size else E
    gain = model.gain
    k_int = gain.abs_integral(t) if t.size else t
    k_sup = np.array([gain.sup_abs(a, b) for a, b in
                      zip(np.r_[t[:1], t[:-1]], np.r_[t[1:], t[-1:]])]) if t.size else t

    def col(name):
        return np.array([getattr(s, name) for s in samples])

    return EnergyReport(t, E, calE, col("kinetic"), col("elastic"), col("minus_psi"),
                        col("memory"), col("gain_window"), col("v_sq"), col("grad_sq"),
                        col("bstar_window_max"), np.asarray(k_int, dtype=float), k_sup,
                        model.b, model.kernel.beta_tilde, floor0)


def audit_gronwall(report, tol=GRONWALL_TOL):
    """E(t) <= exp(3 b^2 int_0^t |k|) calE(0) on every sample."""
    scale = max(float(np.max(np.abs(report.E))) if report.E.size else 0.0, 1e-300)
    if np.any(report.E < 0.25 * report.v_sq - 1e-12 * scale):
        bad = report.t[report.E < 0.25 * report.v_sq - 1e-12 * scale]
        return AuditResult("gronwall", "hypothesis-not-met", 0, [],
                           f"E < |v|^2/4 first at t = {bad[0]:.6g}")
    bound = np.exp(3 * report.b ** 2 * report.k_int) * report.calE[0] * (1 + tol)
    bad = report.E > bound
    ratio = float(np.max(report.E / np.where(bound > 0, bound, np.inf))) if report.E.size else 0.0
    return AuditResult("gronwall", "fail" if bad.any() else "pass", int(bad.sum()),
                       report.t[bad].tolist(), "", ratio)


def audit_lower_bound(report, slack=LOWER_SLACK):
    """E(t) > one quarter of the history-space norm plus gain window."""
    ok, reason = report.lower_precondition
    if not ok:
        return AuditResult("lower_bound", "hypothesis-not-met" if reason.startswith("hypothesis")
                           else "skipped", 0, [], reason)
    rhs = report.quarter_sum
    tol = slack * report.calE[0]
    bad = report.E <= rhs - tol
    if report.E.size and not report.E[0] > 0:
        return AuditResult("lower_bound", "fail", int(bad.sum()) + 1, [float(report.t[0])],
                           "E(0) is not positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = float(np.nanmax(rhs / report.E)) if report.E.size else 0.0
    return AuditResult("lower_bound", "fail" if bad.any() else "pass", int(bad.sum()),
                       report.t[bad].tolist(), "", ratio)


def derivative_bounds(report, slack=DERIVATIVE_SLACK):
    """Central-difference dE/dt and its bound at interior samples."""
    t, E = report.t, report.E
    if t.size < 3:
        return np.empty(0), np.empty(0), np.empty(0)
    dE = (E[2:] - E[:-2]) / (t[2:] - t[:-2])
    window = np.maximum(np.maximum(report.bstar_window_max[:-2], report.bstar_window_max[1:-1]),
                        report.bstar_window_max[2:])
    bound = 1.5 * report.k_sup[1:-1] * window + slack * max(1.0, E[0])
    return t[1:-1], dE, bound


def audit_energy_derivative(report, slack=DERIVATIVE_SLACK):
    """dE/dt <= (3/2) |k| max-window |B* v|^2 + slack.

    |k| is taken as its sup over the differencing interval and the window
    max over the union of the neighbouring windows, the discrete analogue
    of the pointwise bound.
    """
    tt, dE, bound = derivative_bounds(report, slack)
    if tt.size == 0:
        return AuditResult("derivative", "skipped", 0, [], "fewer than three samples")
    bad = dE > bound
    ratio = float(np.max(dE / bound))
    return AuditResult("derivative", "fail" if bad.any() else "pass", int(bad.sum()),
                       tt[bad].tolist(), "", ratio)


def audit_decay_bound(report, c_tilde, mu, t_from=0.0):
    """E(t) <= C_tilde exp(-mu t) for t >= t_from."""
    mask = report.t >= t_from
    bound = c_tilde * np.exp(-mu * report.t[mask])
    bad = report.E[mask] > bound
    ratio = float(np.max(report.E[mask] / bound)) if mask.any() else 0.0
    return AuditResult("decay_bound", "fail" if bad.any() else "pass", int(bad.sum()),
                       report.t[mask][bad].tolist(), "", ratio)


def run_audits(report, toggles):
    if toggles.gronwall:
        report.audits["gronwall"] = audit_gronwall(report)
    if toggles.lower_bound:
        report.audits["lower_bound"] = audit_lower_bound(report)
    if toggles.derivative:
        report.audits["derivative"] = audit_energy_derivative(report)
    return report


# ------------------------------------------------------- semigroup bound ---

@dataclass(frozen=True)
class SemigroupConstants:
    """Reduced-system constants with |S(t)| <= M exp(-omega t) in the reduced norm."""

    M: float
    omega: float
    omega_modes: float
    omega_asymptotic: float
    transport_cap: float
    n_modes: int
    grid_points: int
    level: int
    t_max: float
    label: str = "reduced-system constants"


def reduced_block(lam, weights, rates, beta_tilde):
    """Linear block in weighted coordinates (sqrt(wu) u, v, sqrt(wj) zeta_j).

    zeta_j = (b_j/delta_j) u - z_j; weights wu = (1 - beta_tilde) lam and
    wj = lam delta_j / b_j make the block dissipative in the Euclidean norm.
    """
    J = len(weights)
    C = np.zeros((J + 2, J + 2))
    C[0, 1] = 1.0
    C[1, 0] = -(1 - beta_tilde) * lam
    C[1, 2:] = -lam
    C[2:, 1] = weights / rates
    C[2:, 2:] = -np.diag(rates)
    d = np.sqrt(np.r_[(1 - beta_tilde) * lam, 1.0, lam * rates / weights])
    return (d[:, None] * C) / d[None, :], d


def reduced_coordinates(kernel, u, v, z):
    """Map modal (u, v, z) to the weighted coordinates, shape (n, J + 2)."""
    b, d = kernel.weights, kernel.rates
    zeta = (b / d)[:, None] * u[None, :] - z
    return np.column_stack([u, v, zeta.T])


def reduced_norm(model, u, v, z):
    lam = model.spectrum.lam
    kern = model.kernel
    b, d = kern.weights, kern.rates
    zeta = (b / d)[:, None] * u[None, :] - z
    val = ((1 - kern.beta_tilde) * np.dot(lam, u * u) + np.dot(v, v)
           + np.sum((lam[None, :] * (d / b)[:, None]) * zeta ** 2))
    return math.sqrt(val)


def _abscissa(C):
    return float(np.max(np.linalg.eigvals(C).real))


def _block_profile(C, omega):
    """Callable t -> exp(omega t) |exp(tC)|_2 (vectorised in t)."""
    evals, V = np.linalg.eig(C)
    Vi = np.linalg.inv(V)

    def f(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        E = np.exp(np.multiply.outer(t, evals))
        X = np.einsum("ij,tj,jk->tik", V, E, Vi).real
        sv = np.linalg.eigvalsh(np.einsum("tji,tjk->tik", X, X))[:, -1]
        return np.exp(omega * t) * np.sqrt(np.maximum(sv, 0.0))

    return f, evals


def estimate_semigroup_constants(spectrum, kernel, level=1, base_points=1024,
                                 horizon_factor=40.0):
    """M and omega for the reduced linear blocks of every retained mode.

    omega is the smallest decay rate over the retained modes, the lambda ->
    infinity limit block and half the kernel decay floor.  M is the largest
    value of exp(omega t)|S_k(t)| over a log-plus-linear time grid (nested
    across levels) refined around sampled local maxima.
    """
    if not kernel.n_terms:
        raise NotExponentiallyStable("no memory: the linear blocks are undamped")
    b, d, bt = kernel.weights, kernel.rates, kernel.beta_tilde
    blocks = [reduced_block(lam, b, d, bt)[0] for lam in spectrum.lam]
    alphas = np.array([_abscissa(C) for C in blocks])
    lam_inf = 1e12 * max(1.0, spectrum.lam[-1])
    alpha_inf = _abscissa(reduced_block(lam_inf, b, d, bt)[0])
    if np.any(alphas >= 0) or alpha_inf >= 0:
        worst = max(alphas.max(), alpha_inf)
        raise NotExponentiallyStable(f"non-negative growth rate {worst:.3g}")
    omega_modes = float(-alphas.max())
    omega_inf = float(-alpha_inf)
    cap = 0.5 * kernel.delta
    omega = min(omega_modes, omega_inf, cap)
    t_max = horizon_factor / omega
    M = 1.0
    npts = 0
    for C, alpha in zip(blocks, alphas):
        f, evals = _block_profile(C, omega)
        gap = -alpha - omega
        T = t_max if gap < 1e-12 else min(t_max, horizon_factor / gap)
        freq = max(float(np.max(np.abs(evals.imag))), 1e-3)
        for lev in range(level + 1):
            n = base_points * 2 ** lev + 1
            t_lin = np.linspace(0.0, min(T, 20 * 2 * np.pi / freq), n)
            t_log = np.geomspace(1e-6, T, n)
            grid = np.union1d(t_lin, t_log)
            vals = f(grid)
            npts += grid.size
            M = max(M, float(vals.max()))
            peaks = np.flatnonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
            if peaks.size:
                top = peaks[np.argsort(vals[peaks])[-5:]]
                for i in top:
                    res = minimize_scalar(lambda x: -f(x)[0], bounds=(grid[i - 1], grid[i + 1]),
                                          method="bounded", options={"xatol": 1e-12})
                    M = max(M, float(-res.fun))
    return SemigroupConstants(M, omega, omega_modes, omega_inf, cap, spectrum.n_modes,
                              npts, level, t_max)


def propagator_norms(spectrum, kernel, t):
    """max over modes of |S_k(t)|_2 in the reduced norm at times t."""
    b, d, bt = kernel.weights, kernel.rates, kernel.beta_tilde
    out = np.zeros(np.asarray(t).shape)
    for lam in spectrum.lam:
        f, _ = _block_profile(reduced_block(lam, b, d, bt)[0], 0.0)
        out = np.maximum(out, f(t))
    return out


# ------------------------------------------------------------ certificate ---

@dataclass
class CertificateReport:
    verdict: str
    reason: str
    b: float
    K: float
    tau_bar: float
    M: float
    omega: float
    gamma: float = math.nan
    omega_prime: float = math.nan
    T: float = math.nan
    C_T: float = math.nan
    C_star_T: float = math.nan
    C_star_T_sampled: float = math.nan
    C_star_T_fallback: float = math.nan
    rho: float = math.nan
    C_rho: float = math.nan
    L_C_rho: float = math.nan
    L_scalar_C_rho: float = math.nan
    mu: float = math.nan
    beta_tilde: float = math.nan
    c_h: float = math.nan
    c_h_source: str = ""
    c_h_envelope: float = math.nan
    h_inverse: float = math.nan
    rho_initial: float = math.nan
    log_rho: float = math.nan
    shrink_steps: int = 0
    growth_coefficient: float = math.nan
    constants_label: str = "reduced-system constants"

    @property
    def certified(self):
        return self.verdict == "certified"

    def to_dict(self):
        return asdict(self)


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def constants_chain(model, consts, horizon=None, c_h_envelope=math.nan, max_T_doublings=60,
                    max_shrink=400):
    """Gain budget, growth fit, T, C_T, C*_T, rho, C_rho and mu."""
    b = model.b
    tau_bar = model.tau_bar
    M, omega = consts.M, consts.omega
    horizon = model.horizon if horizon is None else horizon
    nl = model.nonlinearity
    bt = model.kernel.beta_tilde
    K = gain_budget(model.gain, tau_bar)
    rep = CertificateReport("infeasible", "", b, K, tau_bar, M, omega, beta_tilde=bt,
                            c_h=nl.c_h, c_h_source=nl.c_h_source, c_h_envelope=c_h_envelope,
                            constants_label=consts.label)
    try:
        growth = fit_gain_growth(model.gain, b, M, omega, tau_bar, horizon)
    except InfeasibleHypothesis as exc:
        c = b * b * M * math.exp(omega * tau_bar)
        rep.growth_coefficient = c
        rep.omega_prime = c * model.gain.mean_rate
        rep.reason = str(exc)
        return rep
    rep.gamma, rep.omega_prime = growth.gamma, growth.omega_prime
    rep.growth_coefficient = growth.coefficient
    rep.mu = omega - growth.omega_prime
    e = math.exp(omega * tau_bar)
    pre = (4 * M * M * math.exp(2 * growth.gamma) * max(1 + K * b * b * e, e)
           * (1 + e * e * K * K * b ** 4))
    base = tau_bar if tau_bar > 0 else 1.0
    T = None
    for i in range(max_T_doublings + 1):
        cand = base * 2 ** i
        if pre * math.exp(-rep.mu * cand) < 1:
            T = cand
            break
    if T is None:
        rep.reason = "no T on the geometric grid gives C_T < 1"
        return rep
    rep.T = T
    rep.C_T = pre * math.exp(-rep.mu * T)
    log_cstar = 3 * b * b * model.gain.window_sup(T)
    rep.C_star_T = _exp(log_cstar)
    n_win = max(1, int(horizon // T))
    starts = T * np.arange(n_win + 1)
    rep.C_star_T_sampled = _exp(3 * b * b * float(np.max(
        model.gain.window_integral(starts, starts + T))))
    if tau_bar > 0:
        rep.C_star_T_fallback = _exp(3 * b * b * K * (T / tau_bar + 1))
    rep.h_inverse = h_inverse(nl, 0.5 * (1 - bt))
    # in logs: C*_T may overflow long before rho underflows to zero
    rho = math.sqrt(1 - bt) / 2 * math.exp(-0.5 * log_cstar) * rep.h_inverse
    rep.rho_initial = rho
    target = rep.mu / (2 * M)
    steps = 0
    while True:
        C_rho = math.sqrt(1 - bt) * rep.h_inverse * 0.5 ** steps
        L_here = state_lipschitz(nl, C_rho, bt) if math.isfinite(C_rho) else (
            0.0 if not nl.active else math.inf)
        if L_here < target or steps >= max_shrink:
            break
        rho *= 0.5
        steps += 1
    rep.rho, rep.C_rho, rep.L_C_rho, rep.shrink_steps = rho, C_rho, L_here, steps
    rep.log_rho = (math.log(math.sqrt(1 - bt) / 2 * rep.h_inverse) - 0.5 * log_cstar
                   - steps * math.log(2.0))
    rep.L_scalar_C_rho = float(lipschitz_L(nl, C_rho)) if math.isfinite(C_rho) else (
        0.0 if not nl.active else math.inf)
    ok = rep.C_T < 1 and rep.omega_prime < omega and L_here < target and rep.log_rho > -math.inf
    rep.verdict = "certified" if ok else "infeasible"
    rep.reason = "" if ok else "Lipschitz condition not met after shrinking rho"
    return rep


# ------------------------------------------------------------- smallness ---

@dataclass
class Smallness:
    energy_lhs: float
    velocity_lhs: float
    rho: float
    energy_ok: bool
    velocity_ok: bool
    h_u0: float
    h_u0_ok: bool
    U0_norm: float
    calE0: float

    @property
    def ok(self):
        return self.energy_ok and self.velocity_ok

    def to_dict(self):
        return asdict(self)


def initial_sample(model):
    """Energy sample at t = 0 using only the initial history."""
    from .kernel import init_memory_state
    from .model import SimState

    hist = model.history
    n = model.n_modes
    buf = HistoryBuffer(n, hist)
    u0, v0 = hist.u_initial, hist.u1
    buf.append(0.0, u0, v0, np.zeros(n))
    state = SimState(0.0, u0, v0, init_memory_state(model.kernel, hist))
    return energy(model, state, buf)


def smallness(model, rho, sample0=None):
    s0 = initial_sample(model) if sample0 is None else sample0
    bt = model.kernel.beta_tilde
    lhs = s0.v_sq + (1 - bt) * s0.grad_sq + 2 * s0.gain_window + 2 * s0.memory
    vel = model.history.max_velocity_norm()
    h0 = float(h_eval(model.nonlinearity, math.sqrt(s0.grad_sq)))
    calE0 = max(initial_floor(model), s0.E)
    return Smallness(lhs, vel, rho, lhs < rho * rho, vel < rho, h0, h0 < 0.5 * (1 - bt),
                     math.sqrt(history_norm_sq(model, s0)), calE0)


def lower_bound_precondition(model, cert, small, horizon):
    """Whether the lower-bound audit applies, with a reason."""
    bt = model.kernel.beta_tilde
    if small.calE0 == 0.0 and small.U0_norm == 0.0:
        return False, "zero solution"
    if not small.h_u0_ok:
        return False, "hypothesis-not-met: h(|A^1/2 u0(0)|) >= (1 - beta_tilde)/2"
    if cert is not None and cert.certified and small.ok:
        return True, "certified data inside the smallness radius"
    cbar = _exp(3 * model.b ** 2 * model.gain.abs_integral(horizon))
    arg = 2 / math.sqrt(1 - bt) * math.sqrt(cbar * small.calE0)
    if float(h_eval(model.nonlinearity, arg)) < 0.5 * (1 - bt):
        return True, "lower-bound hypotheses hold with C = C_bar(horizon)"
    return False, "hypothesis-not-met: energy too large for the lower bound on this horizon"


def decay_amplitude(model, consts, cert, sample0=None):
    """C_tilde = C_hat^2 (1 + b^2 K e^(omega tau_bar) / 2)."""
    s0 = initial_sample(model) if sample0 is None else sample0
    bt = model.kernel.beta_tilde
    M, omega, b, K = consts.M, consts.omega, model.b, cert.K
    tau_bar = model.tau_bar
    U0 = math.sqrt(history_norm_sq(model, s0))
    static = (1 - bt) * s0.grad_sq + 2 * s0.memory
    r = np.linspace(-tau_bar, 0.0, 2001) if tau_bar > 0 else np.zeros(1)
    g = model.history.g(r)
    gt = np.sqrt(static + np.sum(g * g, axis=1))
    peak = float(np.max(np.exp(omega * r) * gt))
    e = math.exp(omega * tau_bar)
    c_hat = M * math.exp(cert.gamma) * (U0 + e * K * b * b * peak)
    return c_hat ** 2 * (1 + 0.5 * b * b * K * e)


# ---------------------------------------------------------------- fitting ---

@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    r2: float
    method: str
    points: int


def _linfit(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * t + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return -slope, math.exp(icpt), r2


def decay_fit(t, E, window_fraction=0.5, min_r2=0.9):
    """Least-squares fit of log E over the last ``window_fraction`` of the run."""
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if t.size < 2:
        raise NonPositiveEnergy("need at least two samples")
    start = t[-1] - window_fraction * (t[-1] - t[0])
    mask = t >= start
    tw, Ew = t[mask], E[mask]
    if tw.size < 2 or np.any(~(Ew > 0)) or not np.all(np.isfinite(Ew)):
        raise NonPositiveEnergy("energy must be positive and finite on the fit window")
    rate, amp, r2 = _linfit(tw, np.log(Ew))
    if r2 >= min_r2:
        return DecayFit(rate, amp, r2, "raw", int(tw.size))
    peaks = np.flatnonzero((Ew[1:-1] >= Ew[:-2]) & (Ew[1:-1] >= Ew[2:])) + 1
    if peaks.size >= 3:
        rate_p, amp_p, r2_p = _linfit(tw[peaks], np.log(Ew[peaks]))
        return DecayFit(rate_p, amp_p, r2_p, "envelope", int(peaks.size))
    return DecayFit(rate, amp, r2, "raw", int(tw.size))

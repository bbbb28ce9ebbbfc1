"""RK4 integration of the modal system and the Duhamel fixed-point oracle."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import expm

from . import analysis
from .delay import HistoryBuffer
from .errors import (BlowUp, CorrectorDiverged, NoConvergence, NonFiniteValue,
                     NotAContraction)
from .kernel import init_memory_state
from .model import SimState
from .operators import grad_psi, state_lipschitz


def rhs(state, model, delayed_v):
    """(du, dv, dz) for the modal system with a supplied delayed velocity."""
    lam = model.spectrum.lam
    kern = model.kernel
    u, v, z = state.u, state.v, state.z
    dv = -lam * u + grad_psi(model.nonlinearity, u)
    if kern.n_terms:
        dv += lam * z.sum(axis=0)
    k = model.gain.k(state.t)
    if k != 0.0:
        dv -= k * (model.feedback.gram @ delayed_v)
    dz = kern.weights[:, None] * u[None, :] - kern.rates[:, None] * z
    if not (np.all(np.isfinite(dv)) and np.all(np.isfinite(dz))):
        raise NonFiniteValue(f"non-finite derivative at t = {state.t:.6g}")
    return v.copy(), dv, dz


def initial_state(model):
    hist = model.history
    return SimState(0.0, hist.u_initial.copy(), hist.u1.copy(),
                    init_memory_state(model.kernel, hist))


class Stepper:
    """Classical RK4 on (u, v, z) with the delayed velocity frozen per stage.

    When a stage needs the velocity at a time later than the newest
    committed sample (vanishing delay) the step is repeated with the
    provisional end point appended to the buffer until it settles.
    """

    def __init__(self, model):
        self.model = model
        self.lam = model.spectrum.lam
        self.G = model.feedback.gram
        self.nl = model.nonlinearity
        self.gain = model.gain
        self.delay = model.delay
        self.hist = model.history
        self.bw = model.kernel.weights[:, None]
        self.br = model.kernel.rates[:, None]
        self.has_memory = model.kernel.n_terms > 0
        cfg = model.integrator
        self.dt = cfg.dt
        self.tol = cfg.corrector_tol
        self.max_iter = cfg.max_corrector
        self.blowup = cfg.blowup
        self.corrector_steps = 0

    def accel(self, t, u, z, vdel):
        dv = -self.lam * u
        if self.has_memory:
            dv += self.lam * z.sum(axis=0)
        if self.nl.active:
            dv += grad_psi(self.nl, u)
        k = self.gain.k(t)
        if k != 0.0:
            dv -= k * (self.G @ vdel)
        return dv

    def vdel(self, t, buffer):
        arg = t - self.delay.tau(t)
        if arg <= 0.0 and (arg < buffer.t_first or arg == 0.0):
            return self.hist.g(arg)[0]
        return buffer.velocity(arg, extrapolate=True)[0]

    def needs_future(self, t, buffer):
        h = self.dt
        last = buffer.t_last
        for ts in (t + 0.5 * h, t + h):
            if ts - self.delay.tau(ts) > last:
                return True
        return False

    def _rk4(self, t, u, v, z, a0, buffer):
        h = self.dt
        br, bw = self.br, self.bw
        dz1 = bw * u - br * z
        th = t + 0.5 * h
        vd_half = self.vdel(th, buffer)
        u2 = u + 0.5 * h * v
        v2 = v + 0.5 * h * a0
        z2 = z + 0.5 * h * dz1
        a2 = self.accel(th, u2, z2, vd_half)
        dz2 = bw * u2 - br * z2
        u3 = u + 0.5 * h * v2
        v3 = v + 0.5 * h * a2
        z3 = z + 0.5 * h * dz2
        a3 = self.accel(th, u3, z3, vd_half)
        dz3 = bw * u3 - br * z3
        t1 = t + h
        vd_end = self.vdel(t1, buffer)
        u4 = u + h * v3
        v4 = v + h * a3
        z4 = z + h * dz3
        a4 = self.accel(t1, u4, z4, vd_end)
        dz4 = bw * u4 - br * z4
        un = u + h / 6 * (v + 2 * v2 + 2 * v3 + v4)
        vn = v + h / 6 * (a0 + 2 * a2 + 2 * a3 + a4)
        zn = z + h / 6 * (dz1 + 2 * dz2 + 2 * dz3 + dz4)
        an = self.accel(t1, un, zn, vd_end)
        return un, vn, zn, an

    def advance(self, state, buffer, n_index=None):
        """One step from ``state`` (the newest buffer sample); appends the result."""
        t = state.t
        t1 = t + self.dt if n_index is None else (n_index + 1) * self.dt
        a0 = buffer.a[-1]
        if not self.needs_future(t, buffer):
            un, vn, zn, an = self._rk4(t, state.u, state.v, state.z, a0, buffer)
        else:
            self.corrector_steps += 1
            prev = None
            corrections = []
            for it in range(self.max_iter + 1):
                if prev is not None:
                    buffer.append(t1, prev[0], prev[1], prev[3])
                try:
                    un, vn, zn, an = self._rk4(t, state.u, state.v, state.z, a0, buffer)
                finally:
                    if prev is not None:
                        buffer.pop()
                if prev is not None:
                    corr = max(np.max(np.abs(un - prev[0])), np.max(np.abs(vn - prev[1])))
                    scale = max(np.max(np.abs(un)), np.max(np.abs(vn)))
                    corrections.append(corr)
                    if corr <= self.tol * scale:
                        break
                prev = (un, vn, zn, an)
            else:
                if len(corrections) >= 2 and corrections[-1] > corrections[0]:
                    raise CorrectorDiverged(
                        f"corrections grew from {corrections[0]:.3g} to "
                        f"{corrections[-1]:.3g} at t = {t:.6g}")
        for arr in (un, vn, zn, an):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValue(f"non-finite state at t = {t1:.6g}")
        size = max(np.max(np.abs(un)), np.max(np.abs(vn)))
        if size > self.blowup:
            raise BlowUp(f"state norm {size:.3g} exceeded {self.blowup:.3g} at t = {t1:.6g}",
                         t1, size)
        buffer.append(t1, un, vn, an)
        return SimState(t1, un, vn, zn)


def new_buffer(model, state):
    """History buffer holding the initial sample, plus the stepper for it."""
    stepper = Stepper(model)
    buf = HistoryBuffer(model.n_modes, model.history, model.retention,
                        capacity=max(1024, int(2 * model.retention / model.integrator.dt) + 8))
    a0 = stepper.accel(state.t, state.u, state.z, model.history.g(-model.delay.tau(0.0))[0])
    buf.append(state.t, state.u, state.v, a0)
    return buf, stepper


def step(state, model, buffer):
    """Advance one RK4 step; ``buffer`` must end at ``state``."""
    return Stepper(model).advance(state, buffer)


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    status: str = "ok"
    message: str = ""
    steps: int = 0
    dt: float = 0.0
    corrector_steps: int = 0

    def states(self):
        return np.concatenate([self.u, self.v, self.z.reshape(len(self.t), -1)], axis=1)


@dataclass
class RunContext:
    """Constants attached to a run for the audits that need them."""

    constants: object = None
    certificate: object = None
    smallness: object = None
    c_tilde: float = math.nan
    extras: dict = field(default_factory=dict)


def simulate(model, horizon=None, cadence=None, context=None, with_energy=True,
             audits=None, energy_rtol=1e-8):
    """Integrate on [0, horizon]; returns (Trajectory, EnergyReport or None)."""
    horizon = model.horizon if horizon is None else float(horizon)
    cadence = model.cadence if cadence is None else int(cadence)
    toggles = model.audits if audits is None else audits
    dt = model.integrator.dt
    n_steps = int(round(horizon / dt))
    state = initial_state(model)
    buffer, stepper = new_buffer(model, state)
    ts, us, vs, zs, samples = [], [], [], [], []

    def record(st):
        ts.append(st.t)
        us.append(st.u.copy())
        vs.append(st.v.copy())
        zs.append(st.z.copy())
        if with_energy:
            samples.append(analysis.energy(model, st, buffer, rtol=energy_rtol))

    record(state)
    status, message, done = "ok", "", 0
    for n in range(n_steps):
        try:
            state = stepper.advance(state, buffer, n)
        except (NonFiniteValue, CorrectorDiverged) as exc:
            status = "blow-up" if isinstance(exc, NonFiniteValue) else "corrector-diverged"
            message = str(exc)
            break
        done = n + 1
        if done % cadence == 0 or done == n_steps:
            record(state)
    traj = Trajectory(np.array(ts), np.array(us), np.array(vs), np.array(zs), status, message,
                      done, dt, stepper.corrector_steps)
    if not with_energy:
        return traj, None
    report = analysis.build_report(model, samples)
    ctx = context
    if ctx is not None and ctx.smallness is not None:
        report.lower_precondition = analysis.lower_bound_precondition(
            model, ctx.certificate, ctx.smallness, horizon)
    else:
        report.lower_precondition = (False, "no certificate supplied")
    analysis.run_audits(report, toggles)
    if ctx is not None and ctx.certificate is not None and ctx.certificate.certified \
            and ctx.smallness is not None and ctx.smallness.ok and math.isfinite(ctx.c_tilde):
        report.audits["decay_bound"] = analysis.audit_decay_bound(
            report, ctx.c_tilde, ctx.certificate.mu, t_from=model.tau_bar)
    report.extras["status"] = status
    return traj, report


# --------------------------------------------------------------- oracle ---

@dataclass
class PicardResult:
    t: np.ndarray
    states: np.ndarray  # (m, n, J + 2) per-mode (u, v, z_1..z_J)
    iterations: int
    factor: float
    differences: list

    @property
    def u(self):
        return self.states[:, :, 0]

    @property
    def v(self):
        return self.states[:, :, 1]

    @property
    def z(self):
        return np.transpose(self.states[:, :, 2:], (0, 2, 1))

    def flat(self):
        m = self.t.size
        return np.concatenate([self.u, self.v, self.z.reshape(m, -1)], axis=1)


def modal_block(lam, weights, rates):
    """Linear block for (u_k, v_k, z_1k, ..., z_Jk)."""
    J = len(weights)
    B = np.zeros((J + 2, J + 2))
    B[0, 1] = 1.0
    B[1, 0] = -lam
    B[1, 2:] = lam
    B[2:, 0] = weights
    B[2:, 2:] = -np.diag(rates)
    return B


def _lagrange_weights(x, nodes):
    w = np.ones((x.shape[0], nodes.shape[1]))
    for j in range(nodes.shape[1]):
        for m in range(nodes.shape[1]):
            if m != j:
                w[:, j] *= (x - nodes[:, m]) / (nodes[:, j] - nodes[:, m])
    return w


def _stencil(pos, n_grid):
    """4-point stencil indices (rows) around fractional grid positions."""
    base = np.floor(pos).astype(int) - 1
    base = np.clip(base, 0, max(n_grid - 4, 0))
    return base[:, None] + np.arange(4)[None, :]


def contraction_factor(model, consts, xi, sample0=None):
    """M (L_F(C) xi + b^2 |k|_L1[0, xi]) with C from the initial data."""
    s0 = analysis.initial_sample(model) if sample0 is None else sample0
    bt = model.kernel.beta_tilde
    static = (1 - bt) * s0.grad_sq + 2 * s0.memory
    gmax = math.sqrt(static + model.history.max_velocity_norm() ** 2)
    C = max(2 * consts.M * gmax, gmax)
    L = state_lipschitz(model.nonlinearity, C, bt)
    k1 = float(model.gain.window_integral(0.0, xi))
    return consts.M * (L * xi + model.b ** 2 * k1), C


def picard_oracle(model, xi, consts=None, h=None, tol=1e-10, max_iter=200):
    """Fixed point of U -> S(t)U0 + int_0^t S(t-s) N(U)(s) ds on [0, xi].

    S is the per-mode matrix exponential of the linear block and N holds
    the source and delayed feedback.  Each grid interval is integrated with
    three Gauss-Legendre nodes; the iterate is read between grid points by
    4-point Lagrange interpolation.
    """
    if consts is None:
        consts = analysis.estimate_semigroup_constants(model.spectrum, model.kernel)
    factor, _ = contraction_factor(model, consts, xi)
    if not factor < 0.25:
        raise NotAContraction(f"contraction factor {factor:.4g} is not below 1/4")
    h = model.integrator.dt if h is None else h
    m = int(round(xi / h))
    if m < 3:
        raise ValueError("xi must span at least three grid steps")
    t = h * np.arange(m + 1)
    n, J = model.n_modes, model.kernel.n_terms
    w_, r_ = model.kernel.weights, model.kernel.rates
    blocks = [modal_block(lam, w_, r_) for lam in model.spectrum.lam]
    gx, gw = np.polynomial.legendre.leggauss(3)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    S_h = np.array([expm(h * B) for B in blocks])
    S_q = [np.array([expm(h * (1 - x) * B) for B in blocks]) for x in gx]

    s0 = initial_state(model)
    Y0 = np.column_stack([s0.u, s0.v, s0.z.T]) if J else np.column_stack([s0.u, s0.v])

    # interpolation data at Gauss points
    sq = (t[:-1, None] + h * gx[None, :]).ravel()
    pos = sq / h
    idx_u = _stencil(pos, m + 1)
    w_u = _lagrange_weights(pos, idx_u.astype(float))
    arg = sq - model.delay.tau(sq)
    past = arg <= 0.0
    g_past = model.history.g(arg[past]) if past.any() else np.zeros((0, n))
    pos_d = np.where(past, 0.0, arg / h)
    idx_d = _stencil(pos_d, m + 1)
    w_d = _lagrange_weights(pos_d, idx_d.astype(float))
    kq = model.gain.k(sq)
    G = model.feedback.gram
    nl = model.nonlinearity

    Y = np.repeat(Y0[None], m + 1, axis=0)
    diffs = []
    for it in range(1, max_iter + 1):
        U = Y[:, :, 0]
        V = Y[:, :, 1]
        uq = np.einsum("qs,qsn->qn", w_u, U[idx_u])
        vd = np.einsum("qs,qsn->qn", w_d, V[idx_d])
        vd[past] = g_past
        N = -kq[:, None] * (vd @ G.T)
        if nl.active:
            N += grad_psi(nl, uq)
        N = N.reshape(m, 3, n)
        Ynew = np.empty_like(Y)
        Ynew[0] = Y0
        for i in range(1, m + 1):
            acc = np.einsum("kij,kj->ki", S_h, Ynew[i - 1])
            for q in range(3):
                acc += h * gw[q] * S_q[q][:, :, 1] * N[i - 1, q][:, None]
            Ynew[i] = acc
        diff = float(np.max(np.abs(Ynew - Y)))
        diffs.append(diff)
        Y = Ynew
        if diff < tol:
            return PicardResult(t, Y, it, factor, diffs)
    raise NoConvergence(f"no convergence after {max_iter} iterations "
                        f"(last change {diffs[-1]:.3g})")

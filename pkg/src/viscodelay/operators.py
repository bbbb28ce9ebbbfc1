"""Spectral Dirichlet Laplacian, indicator feedback and the two source families."""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import (EmptyObservationSet, InvalidDimension, NegativeArgument,
                     NonFiniteValue)

NONLINEARITY_FAMILIES = ("none", "power", "integral")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Dirichlet Laplacian on (0, length): lam_k = (k pi / length)^2."""

    n_modes: int
    length: float
    lam: np.ndarray

    @property
    def lam1(self):
        return float(self.lam[0])

    def norm_sq(self, u):
        return float(np.dot(u, u))

    def grad_sq(self, u):
        """|A^(1/2) u|^2."""
        return float(np.dot(self.lam, u * u))

    def basis(self, x):
        """Eigenfunctions at points x, shape (len(x), n_modes)."""
        x = np.asarray(x, dtype=float)
        k = np.arange(1, self.n_modes + 1)
        return math.sqrt(2.0 / self.length) * np.sin(np.outer(x, k) * math.pi / self.length)


def build_spectrum(n_modes, length):
    if int(n_modes) != n_modes or n_modes < 1:
        raise InvalidDimension(f"n_modes must be a positive integer, got {n_modes!r}")
    length = float(length)
    if not (length > 0 and math.isfinite(length)):
        raise InvalidDimension(f"length must be positive, got {length!r}")
    k = np.arange(1, int(n_modes) + 1, dtype=float)
    return Spectrum(int(n_modes), length, (k * math.pi / length) ** 2)


@dataclass(frozen=True, eq=False)
class FeedbackOperator:
    """Gram matrix of the indicator of (a, b) in the sine basis; b_norm = 1."""

    a: float
    b: float
    gram: np.ndarray
    b_norm: float = 1.0

    def bstar_sq(self, v):
        """|B* v|^2 = <G v, v>."""
        return float(v @ self.gram @ v)


def build_feedback(spectrum, a, b):
    a, b = float(a), float(b)
    L = spectrum.length
    if not (0.0 <= a < b <= L):
        raise EmptyObservationSet(f"observation interval ({a:g}, {b:g}) not inside (0, {L:g})")
    n = spectrum.n_modes
    k = np.arange(1, n + 1, dtype=float)
    c = math.pi / L

    def sin_diff(m):
        return np.sin(m * c * b) - np.sin(m * c * a)

    J, K = np.meshgrid(k, k, indexing="ij")
    diff = J - K
    summ = J + K
    with np.errstate(divide="ignore", invalid="ignore"):
        off = sin_diff(diff) / (diff * math.pi) - sin_diff(summ) / (summ * math.pi)
    diag = (b - a) / L - sin_diff(2 * k) / (2 * k * math.pi)
    gram = np.where(diff == 0, 0.0, off)
    gram[np.diag_indices(n)] = diag
    gram = 0.5 * (gram + gram.T)
    return FeedbackOperator(a, b, gram, 1.0)


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """Source term psi with growth function h(z) = c_h z^q.

    ``power``: psi(u) = integral of |u|^(q+2)/(q+2), evaluated by collocation
    on ``grid`` interior points.  ``integral``: psi(u) = |u|^(q+2)/(q+2).
    """

    family: str
    exponent: float = 0.0
    c_h: float = 0.0
    grid: int = 0
    c_h_source: str = "none"
    synthesis: np.ndarray = field(default=None, repr=False)
    cell: float = 0.0

    @property
    def active(self):
        return self.family != "none"


def analytic_h_coefficient(family, exponent, spectrum):
    """Coefficient c_h that makes (H2), (H3) and the psi bound hold exactly.

    Power family: uses |u|_inf^2 <= (length/4) |u'|^2 for Dirichlet data and
    |u| <= lam1^(-1/2) |A^(1/2) u|.  Integral family: only the second bound.
    """
    q = float(exponent)
    if family == "none":
        return 0.0
    root = spectrum.lam1 ** -0.5
    if family == "integral":
        base = spectrum.lam1 ** (-(q + 1) / 2)
    else:
        base = (spectrum.length / 4.0) ** (q / 2) * root
    return base * max(1.0, (q + 1) / math.sqrt(2.0), 2.0 * root / (q + 2))


def build_nonlinearity(family, exponent, spectrum, c_h=None, grid_factor=4):
    if family not in NONLINEARITY_FAMILIES:
        raise ValueError(f"unknown nonlinearity family {family!r}")
    if family == "none":
        return NonlinearitySpec("none")
    q = float(exponent)
    if family == "power" and not q > 0:
        raise ValueError("power family needs sigma > 0")
    if family == "integral" and not q >= 1:
        raise ValueError("integral family needs p >= 1")
    source = "configured"
    if c_h is None:
        c_h = analytic_h_coefficient(family, q, spectrum)
        source = "analytic"
    c_h = float(c_h)
    if not c_h > 0:
        raise ValueError("c_h must be positive")
    synth, cell, grid = None, 0.0, 0
    if family == "power":
        grid = int(grid_factor) * spectrum.n_modes
        x = spectrum.length * np.arange(1, grid) / grid
        synth = spectrum.basis(x)
        cell = spectrum.length / grid
    return NonlinearitySpec(family, q, c_h, grid, source, synth, cell)


def _check(x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("non-finite value in source term")
    return x


def grad_psi(spec, u):
    """Modal gradient of psi; rows of a 2-D ``u`` are treated independently."""
    u = np.asarray(u, dtype=float)
    if spec.family == "none":
        return np.zeros_like(u)
    if spec.family == "integral":
        sq = np.sum(u * u, axis=-1, keepdims=True)
        return _check(sq ** (spec.exponent / 2) * u)
    ux = u @ spec.synthesis.T
    f = np.abs(ux) ** spec.exponent * ux
    return _check(spec.cell * (f @ spec.synthesis))


def psi_value(spec, u):
    u = np.asarray(u, dtype=float)
    q = spec.exponent
    if spec.family == "none":
        return 0.0
    if spec.family == "integral":
        return float(_check(np.dot(u, u) ** ((q + 2) / 2) / (q + 2)))
    ux = spec.synthesis @ u
    return float(_check(spec.cell * np.sum(np.abs(ux) ** (q + 2)) / (q + 2)))


def _nonneg(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeArgument(f"{name} must be non-negative")
    return x


def h_eval(spec, r):
    r = _nonneg(r, "r")
    if spec.family == "none":
        return np.zeros_like(r) if r.ndim else 0.0
    out = spec.c_h * r ** spec.exponent
    return out if out.ndim else float(out)


def h_inverse(spec, y):
    y = _nonneg(y, "y")
    if spec.family == "none":
        return np.full_like(y, np.inf) if y.ndim else math.inf
    out = (y / spec.c_h) ** (1.0 / spec.exponent)
    return out if out.ndim else float(out)


def lipschitz_L(spec, r):
    """L(r) = sqrt(2) c_h r^q."""
    r = _nonneg(r, "r")
    if spec.family == "none":
        return np.zeros_like(r) if r.ndim else 0.0
    out = math.sqrt(2.0) * spec.c_h * r ** spec.exponent
    return out if out.ndim else float(out)


def state_lipschitz(spec, r, beta_tilde):
    """Lipschitz constant of U -> (0, grad psi(u), 0) on the history-space ball of radius r."""
    s = math.sqrt(1.0 - beta_tilde)
    return float(lipschitz_L(spec, r / s)) / s


def sample_ratios(spec, spectrum, n_samples=200, seed=0, radius=1.0):
    """Sampled ratios for the three growth bounds, each normalised by c_h.

    Returns a dict of arrays ``h3``, ``lip`` and ``psi``; values <= 1 mean
    the bound holds with the configured c_h.
    """
    rng = np.random.default_rng(seed)
    n = spectrum.n_modes
    q = spec.exponent
    scale = 1.0 / np.sqrt(spectrum.lam) / np.arange(1, n + 1)
    out = {"h3": [], "lip": [], "psi": []}
    for _ in range(n_samples):
        u = rng.standard_normal(n) * scale
        w = rng.standard_normal(n) * scale
        zu = math.sqrt(spectrum.grad_sq(u))
        zw = math.sqrt(spectrum.grad_sq(w))
        r_u = radius * rng.uniform(0.05, 1.0)
        u *= r_u / zu
        w *= radius * rng.uniform(0.05, 1.0) / zw
        z = r_u
        g = grad_psi(spec, u)
        out["h3"].append(np.linalg.norm(g) / (spec.c_h * z ** (q + 1)))
        out["psi"].append(2 * abs(psi_value(spec, u)) / (spec.c_h * z ** (q + 2)))
        r = max(z, math.sqrt(spectrum.grad_sq(w)))
        d = math.sqrt(spectrum.grad_sq(u - w))
        out["lip"].append(np.linalg.norm(g - grad_psi(spec, w)) / (lipschitz_L(spec, r) * d))
    return {k: np.asarray(v) for k, v in out.items()}


def envelope_h_coefficient(spec, spectrum, n_samples=200, seed=0):
    """Numeric envelope 1.05 x (largest sampled requirement on c_h)."""
    if not spec.active:
        return 0.0
    ratios = sample_ratios(spec, spectrum, n_samples, seed)
    worst = max(float(v.max()) for v in ratios.values())
    return 1.05 * worst * spec.c_h

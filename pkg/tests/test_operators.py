import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from viscodelay.errors import EmptyObservationSet, InvalidDimension, NegativeArgument
from viscodelay.operators import (analytic_h_coefficient, build_feedback, build_nonlinearity,
                                  build_spectrum, envelope_h_coefficient, grad_psi, h_eval,
                                  h_inverse, lipschitz_L, psi_value, sample_ratios,
                                  state_lipschitz)


def test_spectrum_examples():
    assert build_spectrum(1, math.pi).lam1 == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_allclose(build_spectrum(3, 1.0).lam, np.pi ** 2 * np.array([1, 4, 9]))
    s = build_spectrum(4, 2.0)
    e1 = np.eye(4)[0]
    assert s.grad_sq(e1) == s.lam1
    assert s.norm_sq(e1) == 1.0


@pytest.mark.parametrize("n,L", [(0, 1.0), (2.5, 1.0), (3, 0.0), (3, -1.0)])
def test_spectrum_rejects_bad_input(n, L):
    with pytest.raises(InvalidDimension):
        build_spectrum(n, L)


def test_basis_orthonormal():
    s = build_spectrum(5, 2.0)
    x = np.linspace(0, 2.0, 20001)
    phi = s.basis(x)
    gram = integrate.simpson(phi[:, :, None] * phi[:, None, :], x=x, axis=0)
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-10)


def test_feedback_full_domain_is_identity():
    s = build_spectrum(6, 1.0)
    fb = build_feedback(s, 0.0, 1.0)
    np.testing.assert_allclose(fb.gram, np.eye(6), atol=1e-14)
    assert fb.b_norm == 1.0


def test_feedback_half_domain_matches_quadrature():
    s = build_spectrum(2, 1.0)
    fb = build_feedback(s, 0.0, 0.5)
    for j in range(2):
        for k in range(2):
            val = integrate.quad(lambda x: s.basis([x])[0, j] * s.basis([x])[0, k], 0, 0.5,
                                 epsabs=1e-14, epsrel=1e-14)[0]
            assert fb.gram[j, k] == pytest.approx(val, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.01, 1.0))
def test_feedback_eigenvalues_in_unit_interval(a, width):
    b = min(1.0, a + width)
    if b <= a:
        return
    fb = build_feedback(build_spectrum(12, 1.0), a, b)
    ev = np.linalg.eigvalsh(fb.gram)
    assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-12
    np.testing.assert_array_equal(fb.gram, fb.gram.T)


def test_feedback_rejects_bad_interval():
    s = build_spectrum(3, 1.0)
    for a, b in [(0.5, 0.5), (0.7, 0.2), (-0.1, 0.5), (0.2, 1.5)]:
        with pytest.raises(EmptyObservationSet):
            build_feedback(s, a, b)


@pytest.mark.parametrize("family,q", [("power", 2.0), ("integral", 2.0), ("power", 1.0)])
def test_grad_zero_at_origin(family, q):
    s = build_spectrum(8, 1.0)
    nl = build_nonlinearity(family, q, s)
    assert np.all(grad_psi(nl, np.zeros(8)) == 0)
    assert psi_value(nl, np.zeros(8)) == 0.0


def test_integral_family_examples():
    s = build_spectrum(3, 1.0)
    nl = build_nonlinearity("integral", 2.0, s)
    u = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(grad_psi(nl, u), u)
    assert psi_value(nl, u) == pytest.approx(0.25)


def test_power_gradient_matches_fine_quadrature():
    s = build_spectrum(6, 1.0)
    nl = build_nonlinearity("power", 2.0, s)
    u = np.array([0.8, -0.3, 0.2, 0.1, -0.05, 0.02])
    x = np.linspace(0, 1.0, 40001)
    phi = s.basis(x)
    ux = phi @ u
    ref = integrate.simpson((ux ** 3)[:, None] * phi, x=x, axis=0)
    np.testing.assert_allclose(grad_psi(nl, u), ref, atol=1e-6)
    ref_psi = integrate.simpson(ux ** 4 / 4, x=x)
    assert psi_value(nl, u) == pytest.approx(ref_psi, rel=1e-6)


def test_grad_psi_rowwise():
    s = build_spectrum(5, 1.0)
    rng = np.random.default_rng(0)
    U = rng.standard_normal((3, 5)) * 0.1
    for fam in ("power", "integral"):
        nl = build_nonlinearity(fam, 2.0, s)
        rows = np.array([grad_psi(nl, u) for u in U])
        np.testing.assert_allclose(grad_psi(nl, U), rows, rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("family", ["power", "integral"])
def test_gradient_is_derivative_of_psi(family, rng):
    s = build_spectrum(6, 1.0)
    nl = build_nonlinearity(family, 2.0, s)
    for _ in range(5):
        u = rng.standard_normal(6) / np.arange(1, 7)
        w = rng.standard_normal(6) / np.arange(1, 7)
        exact = float(np.dot(grad_psi(nl, u), w))
        errs = []
        for eps in (1e-2, 5e-3):
            fd = (psi_value(nl, u + eps * w) - psi_value(nl, u - eps * w)) / (2 * eps)
            errs.append(abs(fd - exact))
        # second-order: halving eps cuts the error about fourfold
        assert errs[1] < errs[0] / 3 or errs[0] < 1e-13


@pytest.mark.parametrize("family,q", [("power", 2.0), ("power", 0.5), ("integral", 1.0),
                                      ("integral", 3.0)])
def test_growth_bounds_hold_with_analytic_coefficient(family, q):
    s = build_spectrum(16, 1.0)
    nl = build_nonlinearity(family, q, s)
    r = sample_ratios(nl, s, n_samples=300, seed=7, radius=2.0)
    assert r["h3"].max() <= 1.0
    assert r["lip"].max() <= 1.0
    assert r["psi"].max() <= 1.0


def test_envelope_is_below_analytic():
    s = build_spectrum(16, 1.0)
    nl = build_nonlinearity("power", 2.0, s)
    env = envelope_h_coefficient(nl, s, n_samples=100)
    assert 0 < env <= nl.c_h


def test_configured_c_h_is_used():
    s = build_spectrum(4, 1.0)
    nl = build_nonlinearity("integral", 2.0, s, c_h=0.7)
    assert nl.c_h == 0.7 and nl.c_h_source == "configured"
    assert analytic_h_coefficient("none", 0, s) == 0.0


def test_h_functions():
    s = build_spectrum(4, 1.0)
    nl = build_nonlinearity("power", 2.0, s)
    assert h_eval(nl, 0.0) == 0.0
    rng = np.random.default_rng(3)
    r = rng.uniform(0.01, 5.0, 50)
    np.testing.assert_allclose(h_inverse(nl, h_eval(nl, r)), r, rtol=1e-13)
    assert lipschitz_L(nl, 1.0) == pytest.approx(math.sqrt(2) * nl.c_h)
    with pytest.raises(NegativeArgument):
        h_eval(nl, -1.0)
    with pytest.raises(NegativeArgument):
        h_inverse(nl, -0.5)


def test_none_family_is_inert():
    s = build_spectrum(4, 1.0)
    nl = build_nonlinearity("none", 0.0, s)
    assert not nl.active
    assert h_inverse(nl, 0.25) == math.inf
    assert lipschitz_L(nl, 3.0) == 0.0
    assert state_lipschitz(nl, 3.0, 0.5) == 0.0


def test_state_lipschitz_scaling():
    s = build_spectrum(4, 1.0)
    nl = build_nonlinearity("integral", 2.0, s)
    bt = 0.5
    r = 0.3
    expect = lipschitz_L(nl, r / math.sqrt(1 - bt)) / math.sqrt(1 - bt)
    assert state_lipschitz(nl, r, bt) == pytest.approx(expect)


def test_integral_lipschitz_on_random_pairs(rng):
    s = build_spectrum(8, 1.0)
    nl = build_nonlinearity("integral", 2.0, s)
    r = 0.8
    for _ in range(200):
        u = rng.standard_normal(8) / np.sqrt(s.lam)
        w = rng.standard_normal(8) / np.sqrt(s.lam)
        u *= r * rng.uniform() / math.sqrt(s.grad_sq(u))
        w *= r * rng.uniform() / math.sqrt(s.grad_sq(w))
        lhs = np.linalg.norm(grad_psi(nl, u) - grad_psi(nl, w))
        assert lhs <= lipschitz_L(nl, r) * math.sqrt(s.grad_sq(u - w)) * (1 + 1e-12)

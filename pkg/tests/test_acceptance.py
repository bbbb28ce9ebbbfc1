"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary
(see ``conftest.py``) as well as to stdout.  Long preset runs are cached in
``conftest.preset_run`` and shared between criteria.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from viscodelay import analysis, cli, dynamics, scenarios
from viscodelay.delay import make_gain

from conftest import ACCEPTANCE_LINES, make_model, preset_bundle, preset_run, replace

CERTIFIED = ("power-source-small", "integral-source-small", "no-delay-linear")
SOURCE_PRESETS = ("power-source-small", "integral-source-small")


def verdict(number, title, ok, detail):
    line = f"criterion {number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_kernel_reduction_exactness():
    m = make_model(n_modes=4, kernel=((1.0, 2.0),), nonlinearity=("power", 2.0),
                   gain=("constant", {"k0": 0.2}), delay=("constant", {"value": 0.5}))
    state = dynamics.initial_state(m)
    buf, stepper = dynamics.new_buffer(m, state)
    buf.retention = math.inf
    b, d = m.kernel.weights[0], m.kernel.rates[0]
    worst = 0.0
    checkpoints = {1000, 2500, 5000}
    for n in range(max(checkpoints)):
        state = stepper.advance(state, buf, n)
        if n + 1 not in checkpoints:
            continue
        t = state.t
        inside, _ = integrate.quad_vec(lambda s: b * math.exp(-d * s) * buf.position(t - s)[0],
                                       0.0, t, epsabs=1e-14, epsrel=1e-12)
        past, _ = integrate.quad_vec(lambda s: b * math.exp(-d * s) * m.history.u0(t - s)[0],
                                     t, t + 40.0, epsabs=1e-14, epsrel=1e-12,
                                     points=[t + m.history.t_hist])
        direct = inside + past
        worst = max(worst, np.linalg.norm(state.z[0] - direct) / np.linalg.norm(direct))
    verdict(1, "kernel reduction", worst < 1e-6, f"max relative error {worst:.2e} (< 1e-6)")


def test_02_integrator_order():
    cfg = (scenarios.preset("power-source-small")
           .with_value("domain.n_modes", 4)
           .with_value("delay", {"family": "constant", "tau_bar": 1.0, "params": {"value": 0.5}})
           .with_value("history.auto_scale", None)
           .with_value("history.amplitude", 1.0))
    dts = (0.02, 0.01, 0.005, 0.0025)
    runs = {}
    for dt in dts:
        model = scenarios.build_model(cfg.with_value("integrator.dt", dt))
        runs[dt], _ = dynamics.simulate(model, horizon=3.0, cadence=1, with_energy=False)
    # sample times on every grid, none at a multiple of the delay
    times = (0.3, 0.8, 1.2, 1.8, 2.2, 2.8)
    diffs = []
    for fine, coarse in zip(dts[1:], dts[:-1]):
        errs = []
        for tq in times:
            a = runs[coarse]
            c = runs[fine]
            i, j = round(tq / coarse), round(tq / fine)
            assert abs(a.t[i] - tq) < 1e-9 and abs(c.t[j] - tq) < 1e-9
            errs.append(max(np.abs(a.u[i] - c.u[j]).max(), np.abs(a.v[i] - c.v[j]).max()))
        diffs.append(max(errs))
    ratios = [diffs[0] / diffs[1], diffs[1] / diffs[2]]
    ok = all(12 <= r <= 20 for r in ratios)
    verdict(2, "integrator order", ok,
            "error ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (in [12, 20])")


def test_03_conservation():
    m = make_model(n_modes=1, kernel=(), position=("constant", [1.0], 0.0, 0.0),
                   velocity=("constant", [0.3], 0.0), dt=1e-3)
    traj, _ = dynamics.simulate(m, horizon=100.0, cadence=100, with_energy=False)
    q = 0.5 * traj.v[:, 0] ** 2 + 0.5 * m.spectrum.lam[0] * traj.u[:, 0] ** 2
    drift = float(np.max(np.abs(q - q[0])))
    verdict(3, "conservation", drift < 1e-8, f"max drift {drift:.2e} over t in [0, 100] (< 1e-8)")


def test_04_picard_equivalence():
    _, rep, m = preset_bundle("power-source-small")
    xi = 0.1
    factor, _ = dynamics.contraction_factor(m, rep.constants, xi)
    assert factor < 0.25, factor
    res = dynamics.picard_oracle(m, xi, rep.constants)
    traj, _ = dynamics.simulate(m, horizon=xi, cadence=1, with_energy=False)
    diff = float(np.max(np.abs(traj.states() - res.flat())))
    verdict(4, "Picard/RK4", factor < 0.25 and diff < 1e-6,
            f"contraction factor {factor:.3f} (< 1/4), sup difference {diff:.2e} (< 1e-6)")


def test_05_semigroup_constants():
    m = make_model(n_modes=1, kernel=((1.0, 2.0),), position=("constant", [1.0], 0.0, 0.0),
                   velocity=("constant", [0.0], 0.0), horizon=20.0)
    c = analysis.estimate_semigroup_constants(m.spectrum, m.kernel)
    block = dynamics.modal_block(math.pi ** 2, m.kernel.weights, m.kernel.rates)
    abscissa = float(np.linalg.eigvals(block).real.max())
    err = abs(c.omega_modes + abscissa)
    # linear runs with several starting states, 200-point grid each
    violations = 0
    for n_modes, pos, vel in ((1, [1.0], [0.0]), (4, [0.2, 1.0, -0.5, 0.3], [1.0, 0.0, 0.4])):
        lin = make_model(n_modes=n_modes, position=("constant", pos, 0.0, 0.0),
                         velocity=("constant", vel + [0.0] * (n_modes - len(vel)), 0.0))
        cc = analysis.estimate_semigroup_constants(lin.spectrum, lin.kernel)
        traj, _ = dynamics.simulate(lin, horizon=20.0, cadence=100, with_energy=False)
        norms = np.array([analysis.reduced_norm(lin, u, v, z)
                          for u, v, z in zip(traj.u, traj.v, traj.z)])
        assert traj.t.size >= 200
        bound = cc.M * np.exp(-cc.omega * traj.t) * norms[0]
        violations += int(np.sum(norms > bound * (1 + 1e-9)))
    ok = err < 1e-8 and violations == 0
    verdict(5, "semigroup constants", ok,
            f"|omega - eigensolver| = {err:.1e} (< 1e-8), bound violations {violations}")


@pytest.mark.parametrize("name", CERTIFIED)
def test_06_gronwall_audit(name):
    _, er = preset_run(name)
    res = er.audits["gronwall"]
    # negative control: inflate one sample well above the bound
    bad = analysis.EnergyReport(**{**er.__dict__, "E": er.E.copy(), "audits": {}})
    k = er.E.size // 2
    bad.E[k] = 10 * math.exp(3 * er.b ** 2 * er.k_int[k]) * er.calE[0]
    neg = analysis.audit_gronwall(bad)
    ok = res.status == "pass" and res.violations == 0 and neg.status == "fail" \
        and neg.violations >= 1
    verdict(6, f"Gronwall audit [{name}]", ok,
            f"{res.violations} violations over {er.t.size} samples, "
            f"peak ratio {res.worst_ratio:.3g}; "
            f"corrupted series flagged {neg.violations}")


@pytest.mark.parametrize("name", CERTIFIED)
def test_07_lower_bound_audit(name):
    _, er = preset_run(name)
    res = er.audits["lower_bound"]
    ratio = float(np.max(er.quarter_sum / er.E))
    ok = res.status == "pass" and er.E[0] > 0 and bool(np.all(er.E > er.quarter_sum))
    verdict(7, f"lower-bound audit [{name}]", ok,
            f"E(0) = {er.E[0]:.3g}, max quarter-sum / E = {ratio:.3g}, "
            f"{res.violations} violations")


@pytest.mark.parametrize("name", CERTIFIED)
def test_08_energy_derivative_audit(name):
    _, er = preset_run(name)
    res = er.audits["derivative"]
    t, dE, bound = analysis.derivative_bounds(er)
    ok = res.status == "pass" and bool(np.all(dE <= bound))
    detail = f"{res.violations} violations over {t.size} interior samples"
    if not np.any(er.k_sup):
        slack = analysis.DERIVATIVE_SLACK * max(1.0, er.E[0])
        ok = ok and bool(np.all(dE <= slack))
        detail += f"; k = 0 so dE/dt <= {slack:.1e} everywhere (max {dE.max():.2e})"
    verdict(8, f"energy-derivative audit [{name}]", ok, detail)


@pytest.mark.parametrize("name", SOURCE_PRESETS)
def test_09_decay_certification(name):
    _, rep, _ = preset_bundle(name)
    _, er = preset_run(name)
    cert = rep.certificate
    ratio = float(np.max(er.E / (rep.c_tilde * np.exp(-cert.mu * er.t))))
    fit = analysis.decay_fit(er.t, er.E)
    ok = (cert.verdict == "certified" and cert.rho > 0 and cert.mu > 0
          and cert.mu == pytest.approx(cert.omega - cert.omega_prime, abs=1e-15)
          and ratio <= 1.0 and fit.rate >= 0.95 * cert.mu)
    verdict(9, f"decay certification [{name}]", ok,
            f"rho = {cert.rho:.4g}, mu = {cert.mu:.4g}, max E/(C e^-mu t) = {ratio:.3g}, "
            f"fitted rate {fit.rate:.4g} (>= {0.95 * cert.mu:.4g})")


def test_10_feasibility_boundary():
    cfg, rep, model = preset_bundle("power-source-small")
    c = rep.constants
    kstar = c.omega / (model.b ** 2 * c.M * math.exp(c.omega * model.tau_bar))
    values = np.linspace(0.5 * kstar, 1.5 * kstar, 21)
    step = values[1] - values[0]
    rows = cli.run_sweep(cfg, "gain.params.k0", values, run=False, workers=1)
    certified = [r["value"] for r in rows if r["verdict"] == "certified"]
    infeasible = [r["value"] for r in rows if r["verdict"] == "infeasible"]
    last_ok, first_bad = max(certified), min(infeasible)
    ok = (last_ok < first_bad and len(certified) + len(infeasible) == len(rows)
          and last_ok < kstar <= first_bad and first_bad - last_ok <= step * (1 + 1e-9))
    verdict(10, "feasibility boundary", ok,
            f"flip between k0 = {last_ok:.5f} and {first_bad:.5f}, predicted {kstar:.5f}")


def test_11_monotonicity():
    _, rep, base = preset_bundle("power-source-small")
    log_rhos = []
    for k0 in np.linspace(0.0, 0.25, 8):
        m = replace(base, gain=make_gain("constant", {"k0": float(k0)}))
        cert = analysis.constants_chain(m, rep.constants)
        log_rhos.append(cert.log_rho if cert.certified else -math.inf)
    rho_ok = all(a >= b for a, b in zip(log_rhos, log_rhos[1:]))
    runs = [preset_run(n)[1] for n in scenarios.preset_names()]
    cal_ok = all(bool(np.all(np.diff(er.calE) >= 0)) for er in runs)
    verdict(11, "monotonicity", rho_ok and cal_ok,
            "log rho over k0 sweep: " + ", ".join(f"{x:.3g}" for x in log_rhos)
            + f"; calE non-decreasing on {len(runs)} runs: {cal_ok}")


def test_12_determinism(tmp_path):
    outs = []
    for tag in ("a", "b"):
        root = tmp_path / tag
        code = cli.main(["run", "preset:power-source-small", "--horizon", "2",
                         "--out", str(root)])
        assert code == cli.EXIT_OK
        outs.append(root / "power-source-small")
    names = sorted(p.name for p in outs[0].iterdir() if p.name != "manifest.json")
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    same = same and names == sorted(p.name for p in outs[1].iterdir()
                                    if p.name != "manifest.json")
    verdict(12, "determinism", same, f"{len(names)} output files byte-identical: "
            + ", ".join(names))


def test_cached_runs_reach_the_full_horizon():
    for name in CERTIFIED:
        traj, _ = preset_run(name)
        assert traj.status == "ok"
        assert traj.t[-1] == pytest.approx(preset_bundle(name)[2].horizon)

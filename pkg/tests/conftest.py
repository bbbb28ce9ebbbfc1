import dataclasses
import functools

import numpy as np
import pytest

from viscodelay import dynamics, scenarios
from viscodelay.delay import make_delay, make_gain, make_history
from viscodelay.kernel import make_kernel, no_memory
from viscodelay.model import IntegratorConfig, Model
from viscodelay.operators import build_feedback, build_nonlinearity, build_spectrum


def make_model(n_modes=4, length=1.0, kernel=((1.0, 2.0),), obs=(0.2, 0.7),
               delay=("constant", {"value": 0.5}), tau_bar=1.0,
               gain=("constant", {"k0": 0.0}), nonlinearity=("none", 0.0),
               position=("ramp", [1.0, -0.5, 0.25], 0.5, 2.0),
               velocity=("consistent", [], 0.0), amplitude=1.0, dt=1e-3, horizon=5.0,
               cadence=10):
    spec = build_spectrum(n_modes, length)
    kern = make_kernel(kernel) if kernel else no_memory()
    fam, coeffs, slope, t_hist = position
    hist = make_history(n_modes, fam, list(coeffs)[:n_modes], velocity[0], velocity[1],
                        slope, t_hist, velocity[2], tau_bar, amplitude)
    return Model(spec, build_feedback(spec, *obs), kern,
                 build_nonlinearity(nonlinearity[0], nonlinearity[1], spec),
                 make_delay(delay[0], delay[1], tau_bar), make_gain(*gain), hist,
                 IntegratorConfig(dt=dt), horizon, cadence, name="test")


@pytest.fixture
def model_factory():
    return make_model


def replace(model, **kw):
    return dataclasses.replace(model, **kw)


@functools.lru_cache(maxsize=None)
def preset_bundle(name):
    """(config, validation report, model) for a built-in preset, computed once."""
    cfg = scenarios.preset(name)
    rep = scenarios.validate(cfg)
    return cfg, rep, scenarios.build_model(cfg)


@functools.lru_cache(maxsize=None)
def preset_run(name, horizon=None):
    """Full simulation with energy report and audits, computed once per session."""
    cfg, rep, model = preset_bundle(name)
    ctx = dynamics.RunContext(rep.constants, rep.certificate, rep.smallness, rep.c_tilde)
    return dynamics.simulate(model, horizon, context=ctx)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

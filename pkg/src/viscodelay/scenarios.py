"""Scenario configuration, hypothesis validation and built-in presets."""

import copy
from dataclasses import dataclass, field
import json
import math

import numpy as np
import yaml

from . import analysis
from .delay import gain_budget, make_delay, make_gain, make_history
from .errors import (InconsistentConfig, InvalidDelay, InvalidGain, KernelError,
                     NotExponentiallyStable, ParseError, UnknownPreset)
from .kernel import KernelSpec, make_kernel
from .model import AuditToggles, IntegratorConfig, Model
from .operators import (build_feedback, build_nonlinearity, build_spectrum,
                        envelope_h_coefficient, grad_psi, psi_value, sample_ratios)

_REQ = object()

SCHEMA = {
    "name": "scenario",
    "exploratory": False,
    "domain": {"n_modes": 32, "length": 1.0},
    "observation": {"a": 0.0, "b": 1.0},
    "kernel": _REQ,
    "delay": {"family": "constant", "tau_bar": 1.0, "params": {"value": 1.0}},
    "gain": {"family": "constant", "params": {"k0": 0.0}},
    "nonlinearity": {"family": "none", "exponent": 0.0, "c_h": None, "grid_factor": 4,
                     "sigma_max": None},
    "history": {
        "position": {"family": "constant", "coefficients": [], "slope": 0.0, "t_hist": 0.0},
        "velocity": {"family": "constant", "coefficients": [], "frequency": 0.0},
        "amplitude": 1.0,
        "auto_scale": None,
    },
    "integrator": {"dt": 1e-3, "scheme": "rk4", "corrector_tol": 1e-9, "max_corrector": 4},
    "horizon": 50.0,
    "cadence": 10,
    "audits": {"gronwall": True, "lower_bound": True, "derivative": True},
}

# sub-maps whose keys depend on a family tag
_FREE_MAPS = {("delay", "params"), ("gain", "params")}


def _merge(schema, data, path):
    if not isinstance(data, dict):
        raise ParseError(f"{'.'.join(path) or 'config'} must be a mapping")
    unknown = set(data) - set(schema)
    if unknown:
        raise ParseError(f"unknown key(s) {sorted(unknown)} in {'.'.join(path) or 'config'}")
    out = {}
    for key, default in schema.items():
        sub = path + (key,)
        if key not in data:
            if default is _REQ:
                raise ParseError(f"missing required key {'.'.join(sub)}")
            out[key] = copy.deepcopy(default)
            continue
        value = data[key]
        if isinstance(default, dict) and sub not in _FREE_MAPS:
            out[key] = _merge(default, value if value is not None else {}, sub)
        elif sub in _FREE_MAPS:
            if not isinstance(value, dict):
                raise ParseError(f"{'.'.join(sub)} must be a mapping")
            out[key] = copy.deepcopy(value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class ScenarioConfig:
    """Validated, fully defaulted scenario description (plain nested data)."""

    def __init__(self, data):
        self.data = _merge(SCHEMA, data, ())
        kern = self.data["kernel"]
        if not isinstance(kern, list):
            raise ParseError("kernel must be a list of {weight, rate} pairs")
        for term in kern:
            if not (isinstance(term, dict) and set(term) == {"weight", "rate"}):
                raise ParseError("each kernel term needs exactly the keys weight and rate")

    def __getitem__(self, key):
        return self.data[key]

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.to_yaml() == other.to_yaml()

    @property
    def name(self):
        return self.data["name"]

    @property
    def exploratory(self):
        return bool(self.data["exploratory"])

    def to_dict(self):
        return copy.deepcopy(self.data)

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def to_json(self):
        return json.dumps(self.data, indent=2)

    def with_value(self, dotted, value):
        """Copy with one entry replaced, e.g. ``gain.params.k0``."""
        data = self.to_dict()
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ParseError(f"no such parameter {dotted!r}")
            node = node[k]
        if not isinstance(node, dict):
            raise ParseError(f"no such parameter {dotted!r}")
        node[keys[-1]] = value
        return ScenarioConfig(data)

    def get_value(self, dotted):
        node = self.data
        for k in dotted.split("."):
            node = node[k]
        return node


def parse_config(text):
    """Parse YAML (a JSON document is valid YAML too)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed config: {exc}") from None
    if data is None:
        raise ParseError("empty config")
    return ScenarioConfig(data)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config.to_yaml())


def build_kernel(config):
    return make_kernel([(t["weight"], t["rate"]) for t in config["kernel"]])


def build_model(config, amplitude=None):
    """Assemble the runtime Model; raises on any structural problem."""
    d = config.data
    try:
        spectrum = build_spectrum(d["domain"]["n_modes"], d["domain"]["length"])
        feedback = build_feedback(spectrum, d["observation"]["a"], d["observation"]["b"])
        kernel = build_kernel(config)
        nl = d["nonlinearity"]
        nonlin = build_nonlinearity(nl["family"], nl["exponent"], spectrum, nl["c_h"],
                                    nl["grid_factor"])
        delay = make_delay(d["delay"]["family"], d["delay"]["params"], d["delay"]["tau_bar"])
        gain = make_gain(d["gain"]["family"], d["gain"]["params"])
        h = d["history"]
        amp = h["amplitude"] if amplitude is None else amplitude
        history = make_history(spectrum.n_modes, h["position"]["family"],
                               h["position"]["coefficients"], h["velocity"]["family"],
                               h["velocity"]["coefficients"], h["position"]["slope"],
                               h["position"]["t_hist"], h["velocity"]["frequency"],
                               delay.tau_bar, amp)
        integ = IntegratorConfig(**d["integrator"])
        audits = AuditToggles(**d["audits"])
    except (KernelError, InconsistentConfig, InvalidDelay, InvalidGain):
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InconsistentConfig(str(exc)) from None
    horizon = float(d["horizon"])
    cadence = int(d["cadence"])
    if not horizon > 0 or cadence < 1:
        raise InconsistentConfig("horizon must be positive and cadence at least 1")
    if delay.tau_bar > 0 and integ.dt > delay.tau_bar:
        raise InconsistentConfig(f"dt = {integ.dt:g} exceeds tau_bar = {delay.tau_bar:g}")
    return Model(spectrum, feedback, kernel, nonlin, delay, gain, history, integ, horizon,
                 cadence, audits, d["name"])


# ------------------------------------------------------------- validation ---

@dataclass
class Verdict:
    status: str  # pass | fail | skipped
    detail: str = ""


@dataclass
class HypothesisReport:
    name: str
    verdicts: dict = field(default_factory=dict)
    exploratory: bool = False
    constants: object = None
    certificate: object = None
    smallness: object = None
    c_tilde: float = math.nan
    warnings: list = field(default_factory=list)

    def add(self, key, ok, detail=""):
        self.verdicts[key] = Verdict("pass" if ok else "fail", detail)

    def skip(self, key, reason):
        self.verdicts[key] = Verdict("skipped", reason)

    @property
    def failures(self):
        return [k for k, v in self.verdicts.items() if v.status == "fail"]

    @property
    def all_pass(self):
        return not self.failures

    @property
    def runnable(self):
        return self.all_pass or self.exploratory

    def lines(self):
        out = [f"scenario = {self.name}", f"all_pass = {str(self.all_pass).lower()}",
               f"exploratory = {str(self.exploratory).lower()}"]
        for k, v in self.verdicts.items():
            out.append(f"{k} = {v.status}" + (f" ({v.detail})" if v.detail else ""))
        for w in self.warnings:
            out.append(f"warning = {w}")
        return out

    def to_dict(self):
        d = {"scenario": self.name, "all_pass": self.all_pass, "exploratory": self.exploratory,
             "verdicts": {k: {"status": v.status, "detail": v.detail}
                          for k, v in self.verdicts.items()},
             "warnings": list(self.warnings)}
        if self.certificate is not None:
            d["certificate"] = self.certificate.to_dict()
        if self.smallness is not None:
            d["smallness"] = self.smallness.to_dict()
        d["c_tilde"] = self.c_tilde
        return d


def _check_nonlinearity(report, model, config, n_samples=64):
    nl = model.nonlinearity
    spec = model.spectrum
    if not nl.active:
        for key in ("H1", "H2", "H3"):
            report.add(key, True, "psi = 0")
        return
    rng = np.random.default_rng(1)
    errs = []
    for _ in range(8):
        u = rng.standard_normal(spec.n_modes) / np.sqrt(spec.lam)
        w = rng.standard_normal(spec.n_modes) / np.sqrt(spec.lam)
        eps = 1e-4
        fd = (psi_value(nl, u + eps * w) - psi_value(nl, u - eps * w)) / (2 * eps)
        ex = float(np.dot(grad_psi(nl, u), w))
        errs.append(abs(fd - ex) / max(abs(ex), 1e-300))
    report.add("H1", max(errs) < 1e-5, f"gradient consistency max rel err = {max(errs):.2e}")
    ratios = sample_ratios(nl, spec, n_samples=n_samples, seed=2)
    zero = psi_value(nl, np.zeros(spec.n_modes)) == 0.0 and not np.any(
        grad_psi(nl, np.zeros(spec.n_modes)))
    report.add("H2", float(ratios["lip"].max()) <= 1.0,
               f"max sampled Lipschitz ratio = {ratios['lip'].max():.4f}")
    h3_ok = float(ratios["h3"].max()) <= 1.0 and float(ratios["psi"].max()) <= 1.0
    report.add("H3", zero and h3_ok,
               f"max sampled growth ratio = {ratios['h3'].max():.4f}, "
               f"psi ratio = {ratios['psi'].max():.4f}")
    smax = config["nonlinearity"]["sigma_max"]
    if nl.family == "power":
        if smax is None:
            report.add("sigma_range", True, "unrestricted in one dimension")
        else:
            report.add("sigma_range", nl.exponent <= float(smax),
                       f"sigma = {nl.exponent:g}, sigma_max = {float(smax):g}")


def validate(config, consts=None):
    """Run every hypothesis checker; never raises for hypothesis failures."""
    if not isinstance(config, ScenarioConfig):
        config = ScenarioConfig(config)
    rep = HypothesisReport(config.name, exploratory=config.exploratory)
    terms = [(t["weight"], t["rate"]) for t in config["kernel"]]
    raw = KernelSpec(tuple((float(w), float(r)) for w, r in terms))
    positive = bool(terms) and all(float(w) > 0 and float(r) > 0 for w, r in terms)
    rep.add("kernel_integrable", positive, "finite positive exponential sum" if positive
            else "kernel terms must be positive and non-empty")
    rep.add("kernel_positive_origin", positive and raw.beta0 > 0, f"beta0 = {raw.beta0:.6g}")
    if positive:
        rep.add("kernel_mass_below_one", raw.beta_tilde < 1,
                f"beta_tilde = {raw.beta_tilde:.6g}")
        rep.add("kernel_decay_floor", raw.hypotheses()["decay_floor"][0],
                f"delta = {raw.delta:.6g}")
    else:
        rep.skip("kernel_mass_below_one", "kernel terms invalid")
        rep.skip("kernel_decay_floor", "kernel terms invalid")
    if rep.failures:
        for key in ("delay_bound", "gain_budget", "H1", "H2", "H3", "semigroup", "gain_growth",
                    "certificate", "smallness_energy", "smallness_velocity"):
            rep.skip(key, "kernel invalid")
        return rep
    try:
        model = build_model(config)
    except (InvalidDelay, InvalidGain) as exc:
        key = "delay_bound" if isinstance(exc, InvalidDelay) else "gain_budget"
        rep.add(key, False, str(exc))
        for other in ("delay_bound", "gain_budget", "H1", "H2", "H3", "semigroup",
                      "gain_growth", "certificate", "smallness_energy", "smallness_velocity"):
            if other != key:
                rep.skip(other, f"{key} failed")
        return rep
    ok, lo, hi = model.delay.audit(model.horizon)
    rep.add("delay_bound", ok, f"tau in [{lo:.6g}, {hi:.6g}], tau_bar = {model.tau_bar:g}")
    K = gain_budget(model.gain, model.tau_bar)
    rep.add("gain_budget", math.isfinite(K), f"K = {K:.6g}")
    _check_nonlinearity(rep, model, config)
    try:
        consts = consts or analysis.estimate_semigroup_constants(model.spectrum, model.kernel)
    except NotExponentiallyStable as exc:
        rep.add("semigroup", False, str(exc))
        return rep
    rep.constants = consts
    rep.add("semigroup", consts.omega > 0,
            f"M = {consts.M:.6g}, omega = {consts.omega:.6g} ({consts.label})")
    env = envelope_h_coefficient(model.nonlinearity, model.spectrum, n_samples=64, seed=3)
    cert = analysis.constants_chain(model, consts, c_h_envelope=env)
    rep.certificate = cert
    if math.isfinite(cert.gamma):
        rep.add("gain_growth", True, f"gamma = {cert.gamma:.6g}, omega' = {cert.omega_prime:.6g}")
    else:
        rep.add("gain_growth", False, cert.reason)
    rep.add("certificate", cert.certified,
            f"rho = {cert.rho:.6g}, mu = {cert.mu:.6g}" if cert.certified else cert.reason)
    s0 = analysis.initial_sample(model)
    small = analysis.smallness(model, cert.rho if cert.certified else math.nan, s0)
    rep.smallness = small
    if cert.certified:
        rep.add("smallness_energy", small.energy_ok,
                f"{small.energy_lhs:.6g} vs rho^2 = {cert.rho ** 2:.6g}")
        rep.add("smallness_velocity", small.velocity_ok,
                f"{small.velocity_lhs:.6g} vs rho = {cert.rho:.6g}")
        rep.c_tilde = analysis.decay_amplitude(model, consts, cert, s0)
    else:
        rep.skip("smallness_energy", "no certified radius")
        rep.skip("smallness_velocity", "no certified radius")
    rep.add("initial_gradient", small.h_u0_ok,
            f"h(|A^1/2 u0(0)|) = {small.h_u0:.6g} vs {(1 - model.kernel.beta_tilde) / 2:.6g}")
    if rep.exploratory and rep.failures:
        rep.warnings.append("exploratory mode: failures reported, simulation allowed")
    return rep


# ---------------------------------------------------------------- presets ---

_BASE = {
    "domain": {"n_modes": 32, "length": 1.0},
    "kernel": [{"weight": 1.0, "rate": 2.0}],
    "integrator": {"dt": 1e-3, "scheme": "rk4", "corrector_tol": 1e-9, "max_corrector": 4},
    "horizon": 50.0,
    "cadence": 10,
}

_RAMP = {
    "position": {"family": "ramp", "coefficients": [1.0, -0.5, 0.25], "slope": 0.5,
                 "t_hist": 2.0},
    "velocity": {"family": "consistent", "coefficients": [], "frequency": 0.0},
}

PRESETS = {
    "power-source-small": {
        "observation": {"a": 0.2, "b": 0.7},
        "delay": {"family": "sinusoidal", "tau_bar": 1.0,
                  "params": {"mean": 0.5, "amplitude": 0.3, "frequency": 1.0, "phase": 0.0}},
        "gain": {"family": "constant", "params": {"k0": 0.05}},
        "nonlinearity": {"family": "power", "exponent": 2.0},
        "history": dict(_RAMP, auto_scale=0.5),
    },
    "integral-source-small": {
        "observation": {"a": 0.1, "b": 0.6},
        "delay": {"family": "piecewise-linear", "tau_bar": 1.0,
                  "params": {"times": [0.0, 5.0, 10.0], "values": [0.3, 0.9, 0.3]}},
        "gain": {"family": "periodic-pulses", "params": {"k0": 0.1, "period": 2.0, "width": 0.5}},
        "nonlinearity": {"family": "integral", "exponent": 2.0},
        "history": {
            "position": {"family": "constant", "coefficients": [0.8, 0.3], "slope": 0.0,
                         "t_hist": 0.0},
            "velocity": {"family": "sinusoidal", "coefficients": [0.2, -0.1, 0.05],
                         "frequency": 2.0},
            "auto_scale": 0.5,
        },
    },
    "no-delay-linear": {
        "observation": {"a": 0.2, "b": 0.7},
        "delay": {"family": "constant", "tau_bar": 1.0, "params": {"value": 0.5}},
        "gain": {"family": "constant", "params": {"k0": 0.0}},
        "nonlinearity": {"family": "none"},
        "history": dict(_RAMP, amplitude=0.1),
    },
    "destabilizing-gain": {
        "exploratory": True,
        "observation": {"a": 0.2, "b": 0.7},
        "delay": {"family": "sinusoidal", "tau_bar": 1.0,
                  "params": {"mean": 0.5, "amplitude": 0.3, "frequency": 1.0, "phase": 0.0}},
        "gain": {"family": "constant", "params": {"k0": 5.0}},
        "nonlinearity": {"family": "power", "exponent": 2.0},
        "history": dict(_RAMP, amplitude=0.05),
    },
}


def auto_scale(config, fraction, consts=None):
    """Set the history amplitude so the larger smallness quantity equals fraction * rho."""
    model = build_model(config, amplitude=1.0)
    consts = consts or analysis.estimate_semigroup_constants(model.spectrum, model.kernel)
    cert = analysis.constants_chain(model, consts)
    if not cert.certified or not math.isfinite(cert.rho):
        return config
    small = analysis.smallness(model, cert.rho)
    unit = max(math.sqrt(small.energy_lhs), small.velocity_lhs)
    if unit == 0.0:
        return config
    return config.with_value("history.amplitude", float(fraction * cert.rho / unit))


def preset(name):
    if name not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    data = copy.deepcopy(_BASE)
    data["name"] = name
    for key, value in copy.deepcopy(PRESETS[name]).items():
        data[key] = value
    config = ScenarioConfig(data)
    frac = config["history"]["auto_scale"]
    if frac is not None:
        config = auto_scale(config, float(frac))
    return config


def preset_names():
    return sorted(PRESETS)

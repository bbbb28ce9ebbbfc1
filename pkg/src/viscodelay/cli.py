"""Command-line entry point: validate, certify, run, fit, sweep and plot."""

import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os
import sys
import time

import numpy as np

from . import __version__, analysis, dynamics, outputs, scenarios
from ._accel import backend
from .errors import NonPositiveEnergy, ParseError, ViscoDelayError
from .model import AuditToggles

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HYPOTHESIS = 2
EXIT_INFEASIBLE = 3
EXIT_BLOWUP = 4

OUTPUT_ENV = "VISCODELAY_OUTPUT_DIR"
PRESET_PREFIX = "preset:"
DETERMINISM_NOTE = ("no random numbers are drawn during simulation; identical inputs give "
                    "byte-identical data files")


@dataclass
class RunManifest:
    command: str
    config: str
    output_dir: str
    determinism: str = DETERMINISM_NOTE
    version: str = __version__
    backend: str = ""
    wall_clock: float = 0.0
    result: dict = field(default_factory=dict)

    def write(self):
        outputs.write_json(os.path.join(self.output_dir, "manifest.json"), self.__dict__)


def load(source):
    """A config path, or ``preset:NAME`` for a built-in scenario."""
    if source.startswith(PRESET_PREFIX):
        return scenarios.preset(source[len(PRESET_PREFIX):])
    if not os.path.isfile(source):
        raise ParseError(f"config file not found: {source}")
    return scenarios.load_config(source)


def output_dir(args, config_name):
    root = args.out or os.environ.get(OUTPUT_ENV) or "viscodelay-output"
    return outputs.ensure_dir(os.path.join(root, config_name))


def _context(report):
    return dynamics.RunContext(report.constants, report.certificate, report.smallness,
                               report.c_tilde)


def _print(lines):
    for line in lines:
        print(line)


# -------------------------------------------------------------- commands ---

def cmd_validate(args):
    config = load(args.config)
    rep = scenarios.validate(config)
    out = output_dir(args, config.name)
    outputs.write_json(os.path.join(out, "validation.json"), rep.to_dict())
    outputs.write_kv(os.path.join(out, "validation.txt"), rep.lines())
    scenarios.save_config(config, os.path.join(out, "config.yaml"))
    _print(rep.lines())
    if rep.failures:
        for key in rep.failures:
            print(f"hypothesis failed: {key}: {rep.verdicts[key].detail}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _certificate_lines(cert):
    keys = ("verdict", "reason", "mu", "rho", "M", "omega", "gamma", "omega_prime", "K", "T",
            "C_T", "C_star_T", "C_rho", "c_h", "c_h_source", "c_h_envelope")
    d = cert.to_dict()
    return [f"{k} = {outputs._fmt(d[k])}" for k in keys]


def cmd_certify(args):
    config = load(args.config)
    rep = scenarios.validate(config)
    out = output_dir(args, config.name)
    cert = rep.certificate
    if cert is None:
        for key in rep.failures:
            print(f"hypothesis failed: {key}: {rep.verdicts[key].detail}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    data = cert.to_dict()
    data["c_tilde"] = rep.c_tilde
    outputs.write_json(os.path.join(out, "certificate.json"), data)
    lines = _certificate_lines(cert) + [f"c_tilde = {outputs._fmt(rep.c_tilde)}"]
    outputs.write_kv(os.path.join(out, "certificate.txt"), lines)
    print(f"verdict = {cert.verdict}")
    print(f"mu = {outputs._fmt(cert.mu)}")
    print(f"rho = {outputs._fmt(cert.rho)}")
    if not cert.certified:
        print(f"infeasible: {cert.reason}", file=sys.stderr)
        return EXIT_INFEASIBLE
    blocking = [k for k in rep.failures if k != "certificate"]
    if blocking and not config.exploratory:
        for key in blocking:
            print(f"hypothesis failed: {key}: {rep.verdicts[key].detail}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _toggles(spec, default):
    if spec is None:
        return default
    names = {s.strip() for s in spec.split(",") if s.strip()}
    if names == {"all"}:
        return AuditToggles(True, True, True)
    if names == {"none"}:
        return AuditToggles(False, False, False)
    unknown = names - {"gronwall", "lower_bound", "derivative"}
    if unknown:
        raise ParseError(f"unknown audit(s) {sorted(unknown)}")
    return AuditToggles("gronwall" in names, "lower_bound" in names, "derivative" in names)


def cmd_run(args):
    start = time.perf_counter()
    config = load(args.config)
    rep = scenarios.validate(config)
    if not rep.runnable:
        for key in rep.failures:
            print(f"hypothesis failed: {key}: {rep.verdicts[key].detail}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    model = scenarios.build_model(config)
    toggles = _toggles(args.audits, model.audits)
    traj, report = dynamics.simulate(model, args.horizon, args.cadence, _context(rep),
                                     audits=toggles)
    out = output_dir(args, config.name)
    header, cols = outputs.trajectory_columns(traj)
    outputs.write_csv(os.path.join(out, "trajectory.csv"), header, cols)
    header, cols = outputs.energy_columns(report)
    outputs.write_csv(os.path.join(out, "energy.csv"), header, cols)
    outputs.write_violations(os.path.join(out, "violations.csv"), report)
    summary = report.summary()
    summary["status_message"] = traj.message
    summary["corrector_steps"] = traj.corrector_steps
    outputs.write_json(os.path.join(out, "energy_report.json"),
                       {"summary": summary,
                        "audits": {k: v.to_dict() for k, v in report.audits.items()},
                        "lower_precondition": list(report.lower_precondition)})
    scenarios.save_config(config, os.path.join(out, "config.yaml"))
    RunManifest("run", args.config, out, backend=backend(),
                wall_clock=time.perf_counter() - start, result=summary).write()
    for name, res in report.audits.items():
        print(f"audit_{name} = {res.status} ({res.violations} violations)")
    print(f"status = {traj.status}")
    print(f"output = {out}")
    if traj.status != "ok":
        print(f"blow-up: {traj.message}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_fit(args):
    data = outputs.read_csv(args.csv)
    if "t" not in data or "E" not in data:
        raise ParseError(f"{args.csv}: need columns t and E")
    fit = analysis.decay_fit(data["t"], data["E"], window_fraction=args.window)
    lines = [f"rate = {outputs._fmt(fit.rate)}", f"amplitude = {outputs._fmt(fit.amplitude)}",
             f"r2 = {outputs._fmt(fit.r2)}", f"method = {fit.method}", f"points = {fit.points}"]
    _print(lines)
    if args.out or os.environ.get(OUTPUT_ENV):
        out = outputs.ensure_dir(args.out or os.environ[OUTPUT_ENV])
        outputs.write_kv(os.path.join(out, "fit.txt"), lines)
        outputs.write_json(os.path.join(out, "fit.json"), fit.__dict__)
    return EXIT_OK


def sweep_point(config_data, param, value, horizon, run):
    """One sweep row; module level so worker processes can import it."""
    config = scenarios.ScenarioConfig(config_data).with_value(param, value)
    rep = scenarios.validate(config)
    cert = rep.certificate
    row = {"value": float(value), "verdict": cert.verdict if cert else "invalid",
           "rho": cert.rho if cert else math.nan,
           "log_rho": cert.log_rho if cert else math.nan, "mu": cert.mu if cert else math.nan,
           "omega_prime": cert.omega_prime if cert else math.nan,
           "fitted_rate": math.nan, "violations": 0, "status": "not-run"}
    if run and rep.failures and not config.exploratory:
        config = config.with_value("exploratory", True)
    if run:
        model = scenarios.build_model(config)
        traj, report = dynamics.simulate(model, horizon, context=_context(rep))
        row["status"] = traj.status
        row["violations"] = int(sum(a.violations for a in report.audits.values()))
        try:
            row["fitted_rate"] = analysis.decay_fit(report.t, report.E).rate
        except NonPositiveEnergy:
            pass
    return row


def run_sweep(config, param, values, horizon=None, run=True, workers=None):
    values = [float(v) for v in values]
    args = [(config.to_dict(), param, v, horizon, run) for v in values]
    if workers == 1 or len(values) == 1:
        rows = [sweep_point(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_point, *zip(*args)))
    return sorted(rows, key=lambda r: r["value"])


SWEEP_COLUMNS = ("value", "verdict", "rho", "log_rho", "mu", "omega_prime", "fitted_rate",
                 "violations", "status")


def cmd_sweep(args):
    config = load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ParseError(f"bad --values {args.values!r}") from None
    if not values:
        raise ParseError("--values is empty")
    config.get_value(args.param)
    rows = run_sweep(config, args.param, values, args.horizon, not args.no_run, args.workers)
    out = output_dir(args, config.name)
    cols = [np.array([r[c] for r in rows], dtype=float if c in ("value", "rho", "log_rho", "mu",
            "omega_prime", "fitted_rate") else object) for c in SWEEP_COLUMNS]
    outputs.write_csv(os.path.join(out, "sweep.csv"), list(SWEEP_COLUMNS), cols)
    print(",".join(SWEEP_COLUMNS))
    for r in rows:
        print(",".join(outputs._fmt(r[c]) for c in SWEEP_COLUMNS))
    return EXIT_OK


def cmd_plot(args):
    data = outputs.read_csv(args.csv)
    if "t" not in data or "E" not in data:
        raise ParseError(f"{args.csv}: need columns t and E")
    target = args.output or os.path.join(os.path.dirname(os.path.abspath(args.csv)),
                                         "energy.svg")
    outputs.plot_energy_svg(target, data["t"], data["E"], args.title or "")
    print(f"output = {target}")
    return EXIT_OK


# ---------------------------------------------------------------- parser ---

def build_parser():
    p = argparse.ArgumentParser(prog="viscodelay", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="YAML/JSON config path or preset:NAME")
        sp.add_argument("--out",
                        help=f"output root (default ${OUTPUT_ENV} or ./viscodelay-output)")
        return sp

    with_config("validate", "check every hypothesis").set_defaults(func=cmd_validate)
    with_config("certify", "compute the decay certificate").set_defaults(func=cmd_certify)
    sp = with_config("run", "simulate and audit the energy")
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--cadence", type=int, help="record every N steps")
    sp.add_argument("--audits", help="comma list of gronwall,lower_bound,derivative; all; none")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("fit", help="fit an exponential decay rate to E(t)")
    sp.add_argument("csv")
    sp.add_argument("--window", type=float, default=0.5, help="trailing fraction of the run")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = with_config("sweep", "vary one parameter")
    sp.add_argument("--param", required=True, help="dotted key, e.g. gain.params.k0")
    sp.add_argument("--values", required=True, help="comma-separated numbers")
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-run", action="store_true", help="certificates only")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plot", help="SVG chart of E(t), linear and log")
    sp.add_argument("csv")
    sp.add_argument("--output")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ViscoDelayError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

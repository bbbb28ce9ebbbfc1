"""File emission: full-precision CSV, JSON and key=value reports, SVG charts."""

import csv
import json
import math
import os

import numpy as np

from .errors import ParseError

FLOAT_FMT = "%.17g"


def _clean(obj):
    """JSON-safe copy; non-finite floats become the strings inf, -inf and nan."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % (float(v) + 0.0)
    return str(v)


def write_kv(path, items):
    """Plain ``key = value`` report; ``items`` is a dict or a list of lines."""
    lines = items if isinstance(items, list) else [f"{k} = {_fmt(v)}" for k, v in items.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(path, header, columns):
    cols = [np.asarray(c) for c in columns]
    n = cols[0].shape[0] if cols else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(c[i]) if c.dtype.kind == "f" else str(c[i]) for c in cols])


def read_csv(path):
    """Numeric CSV with a header row -> dict of float arrays."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header and at least one data row")
    header = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise ParseError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def trajectory_columns(traj):
    n = traj.u.shape[1] if traj.u.ndim == 2 else 0
    header = ["t"] + [f"u{k}" for k in range(1, n + 1)] + [f"v{k}" for k in range(1, n + 1)]
    cols = [traj.t] + [traj.u[:, k] for k in range(n)] + [traj.v[:, k] for k in range(n)]
    return header, cols


def energy_columns(report):
    names = ["t", "E", "calE", "kinetic", "elastic", "minus_psi", "memory", "gain_window",
             "quarter_sum", "bstar_window_max"]
    cols = [report.t, report.E, report.calE, report.kinetic, report.elastic, report.minus_psi,
            report.memory, report.gain_window, report.quarter_sum, report.bstar_window_max]
    for name, arr in report.flag_arrays.items():
        names.append(f"flag_{name}")
        cols.append(arr)
    return names, cols


def write_violations(path, report):
    rows = []
    for name, res in report.audits.items():
        rows.extend((name, float(t)) for t in res.times)
    write_csv(path, ["audit", "t"], [np.array([r[0] for r in rows], dtype=object),
                                     np.array([r[1] for r in rows], dtype=float)])


def plot_energy_svg(path, t, E, title=""):
    """Two stacked panels: E(t) on a linear and on a log axis."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    with matplotlib.rc_context({"svg.hashsalt": "viscodelay", "svg.fonttype": "none"}):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        ax1.plot(t, E, lw=1.2)
        ax1.set_ylabel("E(t)")
        if title:
            ax1.set_title(title)
        pos = E > 0
        if pos.any():
            ax2.semilogy(t[pos], E[pos], lw=1.2)
        ax2.set_yscale("log")
        ax2.set_ylabel("E(t), log scale")
        ax2.set_xlabel("t")
        for ax in (ax1, ax2):
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path

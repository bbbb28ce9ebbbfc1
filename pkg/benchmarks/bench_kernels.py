"""Compare the numba and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time
import timeit

import numpy as np

from viscodelay import _accel


def _data(n_nodes, n_modes, seed=0):
    rng = np.random.default_rng(seed)
    tb = np.cumsum(rng.uniform(0.5e-3, 1.5e-3, n_nodes))
    return tb, rng.standard_normal((n_nodes, n_modes)), rng.standard_normal((n_nodes, n_modes))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    tb, ub, vb = _data(20000, 32)
    lam = np.pi ** 2 * np.arange(1, 33) ** 2
    w, r = np.array([1.0]), np.array([2.0])
    q = np.linspace(tb[0], tb[-1], 4001)
    s = tb[-1] - q[::-1]
    cases = {
        "hermite": (_accel.hermite_numpy, _accel.hermite_numba, (tb, ub, vb, q)),
        "eta_integrand": (_accel.eta_integrand_numpy, _accel.eta_integrand_numba,
                          (tb, ub, vb, tb[-1], ub[-1], lam, w, r, s)),
    }
    print(f"{'kernel':<15}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, (f_np, f_nb, a) in cases.items():
        t0 = time.perf_counter()
        f_nb(*a)  # compile or load from cache
        compile_s = time.perf_counter() - t0
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(f_np(*a) - f_nb(*a))))
        print(f"{name:<15}{t_np:12.3f}{t_nb:12.3f}{t_np / t_nb:10.1f}{diff:12.2e}"
              f"   (first call {compile_s:.2f} s)")


if __name__ == "__main__":
    main()

"""Wall time of the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs once per backend to warm up (numba compiles on first call),
then ``--repeat`` times; the best time is reported together with a check that
both backends produced the same numbers.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from bmint import _accel
from bmint.experiments import free_space_isl_mass, smc_population
from bmint.geometry import DomainSpec, make_grid, unit_square
from bmint.mollify import MollifierSpec, smooth_masses
from bmint.simulate import PathConfig, run_ensemble


def _ensemble(backend):
    dom = unit_square(2)
    ens = run_ensemble(dom, make_grid(dom, 32), PathConfig(1e-4, 0.05, seed=1), 200, backend=backend)
    return ens.tau


def _smoothing(backend):
    g = make_grid(unit_square(2), 64)
    m = np.random.default_rng(0).random((20, 2) + g.shape)
    return smooth_masses(m, MollifierSpec(0.1), g, backend)


def _pair_sum(backend):
    return free_space_isl_mass(0.02, 2, 0.02, 2.5e-5, 4, seed=0, backend=backend)


def _smc(backend):
    dom = DomainSpec((0, 0), (1, 1), 1)
    return smc_population(dom, lambda x: np.zeros(len(x)), 0.5, [0.5], 1e-3, 2000, seed=0,
                          grid=make_grid(dom, 32), backend=backend).log_z


KERNELS = {"ensemble (200 paths x 2 motions)": _ensemble, "smoothing (40 fields, n=64)": _smoothing,
           "free-space pair sum (4 samples)": _pair_sum, "particle population (2000 x 500 steps)": _smc}


def best_of(fn, backend, repeat):
    out = fn(backend)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(backend)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    results = []
    print(f"{'kernel':42s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}  agree")
    for name, fn in KERNELS.items():
        tn, a = best_of(fn, "numba", args.repeat)
        tp, b = best_of(fn, "numpy", args.repeat)
        agree = bool(np.allclose(a, b, rtol=1e-10, atol=1e-13))
        results.append({"kernel": name, "numba_s": tn, "numpy_s": tp, "speedup": tp / tn, "agree": agree})
        print(f"{name:42s} {tn:9.4f} {tp:9.4f} {tp / tn:8.1f}  {agree}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python jump kernels.

Usage: python benchmarks/bench_jumps.py [--n-traj N] [--channels N] [--repeat R]
"""

import argparse
import time

import numpy as np

from collmon.dynamics import DensityMatrix, assemble, propagate
from collmon.jumps import EnsembleConfig, available_backends, ensemble_average, lindblad_operators
from collmon.scattering import random_k_model
from collmon.thermal import GasParameters, energy_shifts, rate_tensor


def setup(n_channels: int, seed: int = 3):
    rng = np.random.default_rng(seed)
    model = random_k_model(rng, n_channels, scale=0.5)
    gas = GasParameters(1.0, 1.0, 1.0)
    rates = rate_tensor(model, gas)
    shifts = energy_shifts(model, gas)
    psi = rng.normal(size=n_channels) + 1j * rng.normal(size=n_channels)
    psi /= np.linalg.norm(psi)
    t = np.linspace(0.0, 5.0 / np.abs(rates.m).max(), 21)
    return model, rates, shifts, psi, t


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-traj", type=int, default=2000)
    parser.add_argument("--channels", type=int, default=3)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    model, rates, shifts, psi, t = setup(args.channels)
    ops = lindblad_operators(rates, shifts)
    exact = propagate(assemble(model.channels, shifts, rates), DensityMatrix.from_pure(model.channels, psi), t)
    cfg = EnsembleConfig(args.n_traj, 12345, t, args.threads)

    results = {}
    for backend in available_backends():
        times = []
        for _ in range(args.repeat):
            start = time.perf_counter()
            rec = ensemble_average(ops, psi, cfg, backend=backend)
            times.append(time.perf_counter() - start)
        results[backend] = rec
        best = min(times)
        dev = np.max(np.abs(rec.states - exact.states))
        print(f"{backend:>7s}: best of {args.repeat} {best:8.3f} s  "
              f"{args.n_traj / best:10.0f} traj/s  max |mean - exact| {dev:.2e}")
        results[backend + "_time"] = best
    if "cython" in results:
        diff = np.max(np.abs(results["cython"].states - results["python"].states))
        print(f"speedup {results['python_time'] / results['cython_time']:.1f}x, "
              f"backend difference {diff:.1e}")
    else:
        print("compiled kernel not built; only the Python backend was timed")


if __name__ == "__main__":
    main()

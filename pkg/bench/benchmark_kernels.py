"""Throughput comparison of the Lamperti kernel backends (numba vs numpy).

Runs the same path-ensemble workloads through both implementations and
reports steps/second.  The backends draw in different orders, so outputs
differ bit-wise but agree in law; a two-sample KS check on the terminal
marginal guards against drift between them.

Usage: python bench/benchmark_kernels.py [--paths 4000] [--steps 1000]
"""

import argparse
import time

import numpy as np
from scipy import stats

from csbplab.catalog import load_catalog
from csbplab.kernels import get_impl
from csbplab.mechanisms import classify
from csbplab.paths import POSITIVITY_FLOOR, LevyIncrementModel


def run_backend(impl, mech, rep, n_paths, n_steps, h, seed):
    model = LevyIncrementModel.build(mech, delta=1e-3)
    gen = np.random.Generator(np.random.PCG64(seed))
    z0 = np.full(n_paths, 1.0)
    snaps = np.array([n_steps], dtype=np.int64)
    t0 = time.perf_counter()
    vals, kind, at = impl.lamperti_ensemble(
        gen, z0, n_steps, h, snaps, model.drift0, model.gauss_core,
        model.gauss_sub, model.ar_floor(h), model.tables.rate,
        model.tables.kinds, model.tables.params, model.tables.cumw,
        not rep.persistent, POSITIVITY_FLOOR, 1e12, not rep.conservative)
    dt = time.perf_counter() - t0
    return vals[:, 0], dt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cat = load_catalog()
    numba_impl = get_impl("numba")
    numpy_impl = get_impl("numpy")

    # warm up the jit once so compile time is not billed to the benchmark
    feller = cat["feller"].mechanism
    run_backend(numba_impl, feller, classify(feller), 8, 8, 1e-3, 0)

    print(f"{'mechanism':<22}{'backend':<8}{'steps/s':>12}{'wall s':>9}")
    for name in ("feller", "neveu", "power-dust", "quadratic-super"):
        mech = cat[name].mechanism
        rep = classify(mech)
        samples = {}
        for label, impl in (("numba", numba_impl), ("numpy", numpy_impl)):
            vals, dt = run_backend(impl, mech, rep, args.paths, args.steps,
                                   1e-3, args.seed)
            rate = args.paths * args.steps / dt
            samples[label] = vals
            print(f"{name:<22}{label:<8}{rate:12.3e}{dt:9.2f}")
        ks = stats.ks_2samp(samples["numba"], samples["numpy"])
        print(f"{'':<22}agreement: KS p-value {ks.pvalue:.3f}")


if __name__ == "__main__":
    main()

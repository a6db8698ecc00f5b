"""Compare the numba and numpy kernel backends on the two hot loops.

    python3 benchmarks/bench_backends.py [--repeat 7]

For each kernel the script checks that both backends give the same result
(bit-identical for the collision sweep, rounding-level for the FP right-hand
side) and prints the best wall time of each.
"""

import argparse
import time

import numpy as np

from shearkin import boltzmann_dsmc as ds
from shearkin import fp_shape_solver as fp
from shearkin.moment_dynamics import coefficient_frame, integrate_stress
from shearkin.tensor_core import ShearFrame, SymTensor2


def best_of(f, repeat):
    f()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        f()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_fp(repeat):
    traj = integrate_stress(SymTensor2.identity(), ShearFrame(1.0), 10.0)
    cf = coefficient_frame(traj, 3.0)
    rows = []
    for n in (128, 256):
        g = fp.VelocityGrid(n, 8.0)
        G = fp.initial_shape("two_bump", g, 3.0)
        for scheme in ("balanced", "central"):
            a = fp.shape_rhs(G, cf, scheme, backend="numba")
            b = fp.shape_rhs(G, cf, scheme, backend="numpy")
            diff = float(np.max(np.abs(a - b)))
            tn = best_of(lambda: fp.shape_rhs(G, cf, scheme, backend="numba"), repeat)
            tp = best_of(lambda: fp.shape_rhs(G, cf, scheme, backend="numpy"), repeat)
            rows.append((f"fp rhs {scheme} n={n}", tn, tp, f"max diff {diff:.1e}"))
    return rows


def bench_dsmc(repeat):
    rows = []
    for n in (20_000, 100_000):
        cfg = ds.CollisionConfig(dt=0.02)
        base = ds.ParticleEnsemble.maxwellian(n, seed=1)

        def sweep(backend):
            ens = base.copy()
            for _ in range(10):
                ds.drift_step(ens, ShearFrame(1.0), cfg.dt, backend)
                ds.collide_step(ens, cfg, backend)
            return ens

        same = np.array_equal(sweep("numba").velocities, sweep("numpy").velocities)
        tn = best_of(lambda: sweep("numba"), repeat)
        tp = best_of(lambda: sweep("numpy"), repeat)
        rows.append((f"dsmc 10 steps N={n}", tn, tp, "bit-identical" if same else "DIFFERENT"))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    rows = bench_fp(args.repeat) + bench_dsmc(args.repeat)
    print(f"{'kernel':<28s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}  check")
    for name, tn, tp, note in rows:
        print(f"{name:<28s} {tn * 1e3:11.3f} {tp * 1e3:11.3f} {tp / tn:9.2f}  {note}")


if __name__ == "__main__":
    main()

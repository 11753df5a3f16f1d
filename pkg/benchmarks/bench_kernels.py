"""Time the per-point kernels on both backends.

Runs every kernel on synthetic scans and reports the best wall time per
backend plus the native speedup. The compiled backend is skipped (with a
note) when the extension is not built.

Usage: python benchmarks/bench_kernels.py [--points N] [--repeats K]
"""

import argparse
import time

import numpy as np

from scanadapt import kernels


def make_inputs(n, rng):
    r = rng.uniform(0.5, 70.0, n)
    az = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(-2.0, 6.0, n)
    positions = np.column_stack([r * np.cos(az), r * np.sin(az), z])
    return {
        "positions": positions,
        "ranges": np.sqrt((positions**2).sum(axis=1)),
        "d_norm": rng.uniform(0.0, 1.0, n),
        "raw": rng.uniform(0.0, 1.0, n),
        "logits": rng.normal(0.0, 2.0, (n, 8)),
        "noise": rng.standard_normal((n, 3)),
        "scale": rng.uniform(0.005, 0.05, (n, 3)),
    }


def cases(inp, small_positions):
    return [
        ("point_ranges", (inp["positions"],)),
        ("pitch_angles", (inp["positions"],)),
        ("softmax_confidence", (inp["logits"],)),
        ("decay_weights", (inp["d_norm"], 0.5, inp["raw"])),
        ("bin_indices", (inp["ranges"], 5.0)),
        ("apply_clamped_noise", (inp["positions"], inp["noise"], inp["scale"], 0.1)),
        ("radius_stats", (small_positions, 1.5)),
    ]


def best_time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000, help="points per scan")
    ap.add_argument("--radius-points", type=int, default=20_000,
                    help="points for the neighborhood kernel (KD-tree bound)")
    ap.add_argument("--repeats", type=int, default=5, help="timed runs, best kept")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    rng = np.random.default_rng(args.seed)
    inp = make_inputs(args.points, rng)
    small = make_inputs(args.radius_points, rng)["positions"]

    print(f"active backend: {kernels.BACKEND}")
    print(f"points: {args.points} ({args.radius_points} for radius_stats), "
          f"best of {args.repeats}")
    if "native" not in backends:
        print("compiled extension not built; timing the numpy backend only")

    header = f"{'kernel':<22}" + "".join(f"{name + ' ms':>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, call_args in cases(inp, small):
        times = {b: best_time(getattr(mod, name), call_args, args.repeats)
                 for b, mod in backends.items()}
        row = f"{name:<22}" + "".join(f"{1e3 * times[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            row += f"{times['numpy'] / times['native']:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

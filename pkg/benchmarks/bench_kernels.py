"""Time the compiled kernels against the numpy fallback on representative inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--size PX]
"""
import argparse
import timeit

import numpy as np

from efs_depth import kernels


def _cases(size, rng):
    image = rng.random((size, size))
    sigmas = rng.uniform(0.0, 6.0, (size, size))
    frames = 64
    log_frames = np.log(rng.uniform(0.05, 1.0, (frames, size * size)))
    times = np.linspace(0.0, 1.0, frames)
    n_events = 200_000
    grid = np.zeros((8, 2, size, size))
    scaled = np.sort(rng.uniform(0, 7, n_events))
    xs = rng.integers(0, size, n_events)
    ys = rng.integers(0, size, n_events)
    ch = rng.integers(0, 2, n_events)
    return {
        "render_gather": lambda: kernels.render_gather(image, sigmas),
        "simulate_pixels": lambda: kernels.simulate_pixels(log_frames, times, 0.15),
        "voxel_accumulate": lambda: kernels.voxel_accumulate(grid.copy(), scaled, xs, ys, ch),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--size", type=int, default=64)
    args = parser.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; timing the numpy fallback only")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in _cases(args.size, np.random.default_rng(0)):
        row = {}
        for backend in backends:
            prev = kernels.use_backend(backend)
            fn = _cases(args.size, np.random.default_rng(0))[name]
            fn()  # warm up
            row[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            kernels.use_backend(prev)
        line = f"{name:<18}" + "".join(f"{row[b] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['compiled']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()

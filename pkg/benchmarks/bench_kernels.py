"""Time the Lanczos resize with the compiled kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each case resizes a random RGB grid to 256x256 with both backends, checks the
outputs are bit-identical, and reports the best-of-N wall time.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from psam.imager import available_backends, resample_float

CASES = [
    ("grow 40x256 -> 256x256", (40, 256, 3)),
    ("shrink 2000x256 -> 256x256", (2000, 256, 3)),
    ("shrink 12000x256 -> 256x256", (12000, 256, 3)),
    ("shrink 3000x1024 -> 256x256", (3000, 1024, 3)),
]


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    names = list(backends)
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, shape in CASES:
        grid = rng.integers(0, 256, shape, dtype=np.uint8)
        outputs, times = {}, {}
        for name, kernel in backends.items():
            outputs[name] = resample_float(grid, 256, 256, resample_axis=kernel)
            times[name] = best_of(lambda: resample_float(grid, 256, 256, resample_axis=kernel), args.repeat)
        ref = outputs[names[0]].tobytes()
        if any(out.tobytes() != ref for out in outputs.values()):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 1
        row = f"{label:32s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())

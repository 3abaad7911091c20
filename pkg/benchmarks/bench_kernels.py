"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed with both backends on identical inputs; the outputs
are checked for agreement before timings are reported.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from pksfil import _kernels_py
from pksfil.profile import make_radial_grid

try:
    from pksfil import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None


def cases():
    rng = np.random.default_rng(0)
    for M in (2048, 32768):
        r = np.ascontiguousarray(make_radial_grid(16.0, M).nodes)
        yield f"radial_march M={M}", "radial_march", (r, 2.638956719889838)
    pos = rng.normal(size=(4000, 3))
    w = rng.uniform(size=4000)
    centers = rng.normal(size=(256, 3))
    radii = np.geomspace(1 / 64, 8.0, 12)
    yield "ball_masses 256x4000x12", "ball_masses", (centers, radii, pos, w)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled kernels are not built; only the pure-Python backend is available")
    print(f"{'case':28s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s}")
    for label, name, inputs in cases():
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat))
        if _compiled is None:
            print(f"{label:28s} {1e3 * t_py:12.2f} {'-':>14s} {'-':>9s}")
            continue
        cc = getattr(_compiled, name)
        a, b = py(*inputs), cc(*inputs)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-12)
        t_cc = min(timeit.repeat(lambda: cc(*inputs), number=1, repeat=args.repeat))
        print(f"{label:28s} {1e3 * t_py:12.2f} {1e3 * t_cc:14.2f} {t_py / t_cc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

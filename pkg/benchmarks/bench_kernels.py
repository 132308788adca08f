"""Compare the numba kernels against their numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--reps 20]

Each kernel is called once before timing so numba compilation is excluded.
Outputs are checked for agreement before any timing is reported.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from tidelab import _kernels as K
from tidelab.bench import median_time


def cases(rng: np.random.Generator):
    x = rng.normal(size=(24576, 64))
    g = rng.normal(size=x.shape)
    gain, bias = rng.normal(size=64), rng.normal(size=64)
    _, xhat, inv = K.layer_norm_fwd_numpy(x, gain, bias, 1e-6)
    yield "layer_norm_fwd", (x, gain, bias, 1e-6)
    yield "layer_norm_bwd", (g, xhat, inv, gain)

    values = rng.normal(size=(321, 4000))
    series = rng.integers(0, 321, size=4096)
    anchors = rng.integers(720, 4000 - 96, size=4096)
    yield "gather_windows", (values, series, anchors, 720, 96)

    A = rng.normal(size=(30, 30)) * 0.1
    C = rng.normal(size=(1, 30))
    yield "lds_rollout", (A, C, rng.normal(size=(3120, 30)), rng.normal(size=(3120, 1)))

    yield "lagged_sum", (rng.normal(size=(320, 1, 5)), rng.normal(size=(3120, 5)))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--warmup", type=int, default=3)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<16}{'numpy_ms':>12}{'numba_ms':>12}{'speedup':>10}")
    for name, call_args in cases(np.random.default_rng(0)):
        f_np = getattr(K, f"{name}_numpy")
        f_nb = getattr(K, f"{name}_numba")
        a, b = f_np(*call_args), f_nb(*call_args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-9)
        t_np = median_time(lambda: f_np(*call_args), args.reps, args.warmup)
        t_nb = median_time(lambda: f_nb(*call_args), args.reps, args.warmup)
        print(f"{name:<16}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

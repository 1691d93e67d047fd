"""Time the compiled quantizer/calibrator kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size N] [--repeat R]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gdfq.quant import kernels
from gdfq.quant.calibrate import kl_windows, mse_candidates
from gdfq.quant.quantizer import compute_quant_params


def workloads(size: int, rng: np.random.Generator):
    x = rng.normal(size=size)
    qp = compute_quant_params(-2.0, 2.5, 4)
    fq_args = (x, qp.delta, qp.b, float(qp.qmin), float(qp.qmax), qp.l, qp.u)
    acts = np.abs(rng.normal(size=size))
    lows, highs = mse_candidates(acts)
    hist, _, starts, ends = kl_windows(acts, 4)
    return {
        "quantize_codes": lambda impl: impl.quantize_codes(*fq_args[:5]),
        "fake_quant": lambda impl: impl.fake_quant(*fq_args),
        "mse_sweep": lambda impl: impl.mse_sweep(acts, lows, highs, 4),
        "kl_sweep": lambda impl: impl.kl_sweep(hist, starts, ends, 16),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the fallback is timed")
    jobs = workloads(args.size, np.random.default_rng(0))
    print(f"{'kernel':<16}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for kname, fn in jobs.items():
        times = {}
        for name, impl in impls.items():
            fn(impl)  # warm up
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kname:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values()) + f"{speed:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

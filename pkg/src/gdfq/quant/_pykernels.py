"""Pure-numpy implementations of the quantizer hot paths.

Same signatures and arithmetic order as ``_ckernels.pyx``; elementwise kernels
match it bit for bit, the sweeps agree to rounding of the reductions.
"""
from __future__ import annotations

import numpy as np

KL_FLOOR = 1e-10


def quantize_codes(x: np.ndarray, delta: float, b: float, qmin: float, qmax: float) -> np.ndarray:
    s = x * delta - b
    return np.minimum(np.maximum(np.rint(s), qmin), qmax).astype(np.int64)


def fake_quant(
    x: np.ndarray, delta: float, b: float, qmin: float, qmax: float, lo: float, hi: float
) -> tuple[np.ndarray, np.ndarray]:
    """Dequantized values and the straight-through mask ``lo <= x <= hi``."""
    s = x * delta - b
    c = np.minimum(np.maximum(np.rint(s), qmin), qmax)
    return (c + b) / delta, (x >= lo) & (x <= hi)


def mse_sweep(values: np.ndarray, lows: np.ndarray, highs: np.ndarray, k: int) -> np.ndarray:
    """Mean squared fake-quantization error of ``values`` for each candidate range."""
    levels = 2.0**k - 1.0
    half = 2.0 ** (k - 1)
    out = np.empty(len(lows))
    for i, (lo, hi) in enumerate(zip(lows, highs)):
        delta = levels / (hi - lo)
        b = lo * delta + half
        deq, _ = fake_quant(values, delta, b, -half, half - 1.0, lo, hi)
        err = deq - values
        out[i] = np.mean(err * err)
    return out


def kl_sweep(hist: np.ndarray, starts: np.ndarray, stops: np.ndarray, nlevels: int) -> np.ndarray:
    """KL(reference || quantized) of a histogram for each bin window ``[start, stop)``.

    Reference: the window's counts with out-of-window mass folded into the edge
    bins.  Quantized: the window's own counts merged into ``nlevels`` groups and
    spread back uniformly over the group's nonzero reference bins.
    """
    out = np.empty(len(starts))
    for i, (s, e) in enumerate(zip(starts, stops)):
        n = e - s
        window = hist[s:e]
        p = window.copy()
        p[0] += hist[:s].sum()
        p[-1] += hist[e:].sum()
        nonzero = p != 0
        q = np.zeros(n)
        bounds = (np.arange(nlevels + 1) * n) // nlevels
        for j in range(nlevels):
            a, z = bounds[j], bounds[j + 1]
            cnt = np.count_nonzero(nonzero[a:z])
            if cnt:
                q[a:z] = np.where(nonzero[a:z], window[a:z].sum() / cnt, 0.0)
        qsum = q.sum()
        if qsum <= 0:
            out[i] = np.inf
            continue
        p = p / p.sum()
        q = np.maximum(q / qsum, KL_FLOOR)
        mask = p > 0
        out[i] = np.sum(p[mask] * np.log(p[mask] / q[mask]))
    return out

"""Post-training clip-range calibrators: min-max, MSE, ACIQ, KL."""
from __future__ import annotations

import numpy as np
from scipy import optimize, stats

from gdfq.errors import BitwidthError, ContractError, DegenerateRangeError, NumericError
from gdfq.quant import kernels

METHODS = ("minmax", "mse", "aciq", "kl")
HIST_BINS = 2048
GRID_STEPS = 100


def _prepare(values, k: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ContractError("cannot calibrate on an empty value set")
    if not np.all(np.isfinite(v)):
        raise NumericError("calibration values must be finite")
    if int(k) != k or k < 2:
        raise BitwidthError(f"bitwidth must be an integer >= 2, got {k}")
    if v.min() == v.max():
        raise DegenerateRangeError("calibration values have zero spread")
    return v


def calibrate_clip_range(values, method: str, k: int) -> tuple[float, float]:
    v = _prepare(values, k)
    if method == "minmax":
        return float(v.min()), float(v.max())
    if method == "mse":
        return _mse(v, k)
    if method == "aciq":
        return _aciq(v, k)
    if method == "kl":
        return _kl(v, k)
    raise ContractError(f"unknown calibration method {method!r}; expected one of {METHODS}")


def mse_candidates(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric ``(-m s, m s)`` then proportional ``(lo s, hi s)`` for s in (0, 1]."""
    lo, hi = float(v.min()), float(v.max())
    m = max(abs(lo), abs(hi))
    s = np.arange(1, GRID_STEPS + 1) / GRID_STEPS
    return np.concatenate([-m * s, lo * s]), np.concatenate([m * s, hi * s])


def _mse(v: np.ndarray, k: int) -> tuple[float, float]:
    lows, highs = mse_candidates(v)
    err = kernels.mse_sweep(v, lows, highs, k)
    i = int(np.argmin(err))
    return float(lows[i]), float(highs[i])


def aciq_expected_error(a: float, k: int) -> float:
    """Expected squared quantization error, in units of sigma^2, when a
    Gaussian is clipped symmetrically at ``a`` standard deviations."""
    tail = 1.0 - stats.norm.cdf(a)
    clip = 2.0 * ((1.0 + a * a) * tail - a * stats.norm.pdf(a))
    step = 2.0 * a / (2.0**k - 1.0)
    return clip + step * step / 12.0 * (1.0 - 2.0 * tail)


def _aciq(v: np.ndarray, k: int) -> tuple[float, float]:
    mu, sigma = float(v.mean()), float(v.std())
    res = optimize.minimize_scalar(
        aciq_expected_error, bounds=(1e-3, 20.0), args=(k,), method="bounded", options={"xatol": 1e-10}
    )
    alpha = float(res.x) * sigma
    return max(mu - alpha, float(v.min())), min(mu + alpha, float(v.max()))


def kl_windows(v: np.ndarray, k: int):
    """Histogram of ``v`` plus the candidate bin windows and their clip bounds.

    One-signed data get windows anchored at the bound nearest zero; mixed-sign
    data get windows symmetric about zero.  Windows narrower than the number of
    quantization levels are dropped.  For one-signed data the values sitting
    exactly on the anchor are left out of the histogram: the anchor is always a
    quantization level, so they carry no error, and a large spike there (ReLU
    zeros) would otherwise push every choice toward the narrowest window.
    """
    lo, hi = float(v.min()), float(v.max())
    steps = np.arange(1, GRID_STEPS + 1)
    if lo >= 0 or hi <= 0:
        anchor = lo if lo >= 0 else hi
        hist, edges = np.histogram(v[v != anchor], bins=HIST_BINS, range=(lo, hi))
        width = np.ceil(HIST_BINS * steps / GRID_STEPS).astype(np.int64)
        if lo >= 0:
            starts, stops = np.zeros_like(width), width
        else:
            starts, stops = HIST_BINS - width, np.full_like(width, HIST_BINS)
    else:
        m = max(abs(lo), abs(hi))
        hist, edges = np.histogram(v, bins=HIST_BINS, range=(-m, m))
        half = np.ceil((HIST_BINS // 2) * steps / GRID_STEPS).astype(np.int64)
        starts, stops = HIST_BINS // 2 - half, HIST_BINS // 2 + half
    keep = (stops - starts) >= 2**k
    return hist.astype(np.float64), edges, starts[keep], stops[keep]


def _kl(v: np.ndarray, k: int) -> tuple[float, float]:
    hist, edges, starts, stops = kl_windows(v, k)
    if starts.size == 0:
        # more levels than histogram bins: nothing to clip at this resolution
        return float(v.min()), float(v.max())
    div = kernels.kl_sweep(hist, starts, stops, 2**k)
    i = int(np.argmin(div))
    return float(edges[starts[i]]), float(edges[stops[i]])

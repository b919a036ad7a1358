"""Gaussian-kernel density estimation for classifier belief scores.

A fitted model is the sample set plus a bandwidth; the density is
f(x) = (1/kh) sum_i K((x - x_i)/h) with the standard normal kernel K, and
the CDF replaces K by the normal CDF.  Evaluation is exact summation over
the sorted sample set, truncated at |x - x_i| > 8h where the kernel is
numerically zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_TRUNC_BANDWIDTHS = 8.0
_CHUNK = 1024


def silverman_bandwidth(samples):
    """Rule-of-thumb bandwidth 0.9 * min(std, IQR/1.34) * k^(-1/5).

    Falls back to 1e-3 (with a warning) when the sample set has zero
    spread, so downstream densities stay finite.
    """
    x = np.asarray(samples, dtype=float)
    k = x.size
    if k < 2:
        raise ValueError(f"need at least 2 samples for a bandwidth, got {k}")
    if x.max() == x.min():
        warnings.warn("degenerate sample set (zero spread); bandwidth fallback 1e-3")
        return 1e-3
    std = float(np.std(x))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    scale = min(std, iqr / 1.34) if iqr > 0.0 else std
    return 0.9 * scale * k ** (-0.2)


@dataclass
class KdeModel:
    """Immutable nonparametric marginal: sorted samples + bandwidth."""

    samples: np.ndarray
    bandwidth: float
    degenerate: bool = False

    @classmethod
    def fit(cls, samples, bandwidth=None):
        x = np.sort(np.asarray(samples, dtype=float))
        if x.size < 2:
            raise ValueError(f"need at least 2 samples to fit a KDE, got {x.size}")
        degenerate = x[0] == x[-1]
        if bandwidth is None:
            bandwidth = silverman_bandwidth(x)
        if not bandwidth > 0.0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        return cls(samples=x, bandwidth=float(bandwidth), degenerate=degenerate)


def _windows(model, x_sorted):
    """Yield (query slice, sample window, n_below) chunks over sorted queries."""
    cut = _TRUNC_BANDWIDTHS * model.bandwidth
    for start in range(0, x_sorted.size, _CHUNK):
        q = x_sorted[start : start + _CHUNK]
        lo = int(np.searchsorted(model.samples, q[0] - cut, side="left"))
        hi = int(np.searchsorted(model.samples, q[-1] + cut, side="right"))
        yield slice(start, start + q.size), q, model.samples[lo:hi], lo


def _tail_log_pdf(model, q):
    """Log density from the nearest sample; keeps far tails finite."""
    k = model.samples.size
    idx = np.clip(np.searchsorted(model.samples, q), 0, k - 1)
    z = (q - model.samples[idx]) / model.bandwidth
    return -0.5 * z * z - math.log(k * model.bandwidth * _SQRT_2PI)


def _eval_sorted(model, x, kind):
    order = np.argsort(x, kind="stable")
    xs = x[order]
    out = np.empty_like(xs)
    h = model.bandwidth
    k = model.samples.size
    for sl, q, win, n_below in _windows(model, xs):
        if kind == "pdf":
            if win.size == 0:
                out[sl] = 0.0
                continue
            z = (q[:, None] - win[None, :]) / h
            out[sl] = np.exp(-0.5 * z * z).sum(axis=1) / (k * h * _SQRT_2PI)
        elif kind == "cdf":
            if win.size == 0:
                out[sl] = n_below / k
                continue
            z = (q[:, None] - win[None, :]) / h
            out[sl] = (ndtr(z).sum(axis=1) + n_below) / k
        else:  # logpdf, op-for-op identical to kde_transform
            if win.size == 0:
                out[sl] = _tail_log_pdf(model, q)
                continue
            z = (q[:, None] - win[None, :]) / h
            np.multiply(z, z, out=z)
            np.multiply(z, -0.5, out=z)
            np.exp(z, out=z)
            total = z.sum(axis=1)
            with np.errstate(divide="ignore"):
                lp = np.log(total) - math.log(k * h * _SQRT_2PI)
            empty = total == 0.0
            if np.any(empty):
                lp[empty] = _tail_log_pdf(model, q[empty])
            out[sl] = lp
    result = np.empty_like(out)
    result[order] = out
    return result


def kde_transform(model, x):
    """(cdf, log_pdf) at x in one pass over the shared sample windows."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    order = np.argsort(arr, kind="stable")
    xs = arr[order]
    cdf = np.empty_like(xs)
    logpdf = np.empty_like(xs)
    h = model.bandwidth
    k = model.samples.size
    log_norm = math.log(k * h * _SQRT_2PI)
    for sl, q, win, n_below in _windows(model, xs):
        if win.size == 0:
            cdf[sl] = n_below / k
            logpdf[sl] = _tail_log_pdf(model, q)
            continue
        z = (q[:, None] - win[None, :]) / h
        cdf[sl] = (ndtr(z).sum(axis=1) + n_below) / k
        # within the 8h window exp cannot underflow for a query's own
        # neighborhood; an all-zero row only happens when this chunk's
        # envelope holds no sample near the query, handled by the tail form
        np.multiply(z, z, out=z)
        np.multiply(z, -0.5, out=z)
        np.exp(z, out=z)
        total = z.sum(axis=1)
        with np.errstate(divide="ignore"):
            lp = np.log(total) - log_norm
        empty = total == 0.0
        if np.any(empty):
            lp[empty] = _tail_log_pdf(model, q[empty])
        logpdf[sl] = lp
    out_cdf = np.empty_like(cdf)
    out_logpdf = np.empty_like(logpdf)
    out_cdf[order] = cdf
    out_logpdf[order] = logpdf
    return out_cdf, out_logpdf


def _evaluate(model, x, kind):
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    values = _eval_sorted(model, np.atleast_1d(arr).astype(float), kind)
    return float(values[0]) if scalar else values


def kde_pdf(model, x):
    """Kernel density estimate at x (scalar or array)."""
    return _evaluate(model, x, "pdf")


def kde_log_pdf(model, x):
    """Log density, finite even deep in the tails."""
    return _evaluate(model, x, "logpdf")


def kde_cdf(model, x):
    """Kernel CDF estimate at x; monotone with limits 0 and 1."""
    return _evaluate(model, x, "cdf")


def kde_to_dict(model, q16=False):
    """JSON-ready mapping; q16 stores samples as 16-bit fixed point on [0,1]."""
    if q16:
        q = np.clip(np.round(model.samples * 65535.0), 0, 65535).astype(int)
        return {
            "encoding": "q16",
            "bandwidth": float(model.bandwidth),
            "samples": [int(v) for v in q],
        }
    return {
        "bandwidth": float(model.bandwidth),
        "samples": [float(v) for v in model.samples],
    }


def kde_from_dict(obj):
    samples = np.asarray(obj["samples"], dtype=float)
    if obj.get("encoding") == "q16":
        samples = samples / 65535.0
    return KdeModel(
        samples=np.sort(samples),
        bandwidth=float(obj["bandwidth"]),
        degenerate=bool(samples.size) and samples.min() == samples.max(),
    )

"""Comparison fusers: linear opinion pool, majority voting, logit fusion."""

from __future__ import annotations

import numpy as np

from .copulas import CLAMP_EPS


def _check_aligned(tensors):
    tensors = [np.asarray(t, dtype=float) for t in tensors]
    if not tensors:
        raise ValueError("need at least one belief tensor")
    shape = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.shape != shape:
            raise ValueError(f"tensor {i} has shape {t.shape}, expected {shape}")
    return tensors


def uniform_weights(count):
    return np.full(count, 1.0 / count)


def _check_weights(weights, count):
    w = np.asarray(weights, dtype=float)
    if w.shape != (count,):
        raise ValueError(f"need {count} weights, got shape {w.shape}")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()}")
    return w


def lop_fuse(tensors, weights=None):
    """Weighted average of belief tensors (linear opinion pool)."""
    tensors = _check_aligned(tensors)
    if weights is None:
        weights = uniform_weights(len(tensors))
    w = _check_weights(weights, len(tensors))
    out = np.zeros_like(tensors[0])
    for wi, t in zip(w, tensors):
        out += wi * t
    return out


def majority_vote(tensors):
    """Per-pixel plurality over classifier argmax votes.

    Ties among top vote-getters go to the tied class with the highest
    single confidence score across classifiers; residual exact ties go to
    the lowest class index.
    """
    tensors = _check_aligned(tensors)
    if len(tensors) < 2:
        raise ValueError("majority voting needs at least 2 classifiers")
    m = tensors[0].shape[-1]
    flat = [t.reshape(-1, m) for t in tensors]
    votes = np.stack([f.argmax(axis=1) for f in flat], axis=1)  # (P, L)
    counts = np.zeros((votes.shape[0], m), dtype=np.int64)
    for l in range(votes.shape[1]):
        counts[np.arange(votes.shape[0]), votes[:, l]] += 1
    top = counts.max(axis=1, keepdims=True)
    tied = counts == top
    max_conf = np.maximum.reduce([f for f in flat])  # (P, M)
    scored = np.where(tied, max_conf, -np.inf)
    labels = scored.argmax(axis=1)
    return labels.reshape(tensors[0].shape[:-1])


def logit_fuse(tensors, a=1.0):
    """Geometric mean of odds raised to exponent a, mapped back to (0,1).

    Computed in log-odds space: fused log-odds is a times the mean of the
    per-classifier log-odds.
    """
    tensors = _check_aligned(tensors)
    if not a > 0.0:
        raise ValueError(f"logit exponent must be positive, got {a}")
    acc = np.zeros_like(tensors[0])
    for t in tensors:
        p = np.clip(t, CLAMP_EPS, 1.0 - CLAMP_EPS)
        acc += np.log(p) - np.log1p(-p)
    log_odds = a * acc / len(tensors)
    # sigmoid, stable on both sides
    out = np.empty_like(log_odds)
    pos = log_odds >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-log_odds[pos]))
    ex = np.exp(log_odds[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

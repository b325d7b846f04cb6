"""Adaptive weighted Bayesian fusion.

Each source (a metric inside a block, or a block inside the plant) is turned
into likelihoods from the ratio ``r = S / S_lim``::

    P(X | N) = exp(-r)        P(X | F) = exp(-1 / r)

then into a fault posterior with prior ``alpha``.  Sources are combined with
weights ``w * P(X | F)`` where ``w`` is a softmax of ``r - 1``.  At ``S = 0``
the limits ``P(X | F) = 0``, ``P(X | N) = 1`` are used.

The same kernel serves both levels; :func:`wbf` works along the last axis of
arbitrary arrays so whole monitoring runs are fused in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .stats import kde_limit


@dataclass(frozen=True)
class MetricReading:
    value: float
    limit: float
    metric_id: str = "t2"
    block_id: str = ""

    def __post_init__(self):
        if not self.limit > 0:
            raise ValueError("metric limit must be positive")
        if self.value < 0:
            raise ValueError("metric value must be non-negative")


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def prior_normal(self) -> float:
        return 1.0 - self.alpha

    @property
    def prior_fault(self) -> float:
        return self.alpha


@dataclass(frozen=True)
class BlockFused:
    B: float
    weights: np.ndarray
    B_lim: float | None = None


@dataclass(frozen=True)
class PlantIndex:
    PFI: float
    weights: np.ndarray
    alarm: bool


def metric_probabilities(value, limit):
    """(P(X|N), P(X|F)); vectorized."""
    r = np.asarray(value, dtype=np.float64) / np.asarray(limit, dtype=np.float64)
    with np.errstate(divide="ignore"):
        pF = np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)
    pN = np.exp(-r)
    if pN.ndim == 0:
        return float(pN), float(pF)
    return pN, pF


def posterior(pN, pF, alpha: float):
    pN = np.asarray(pN, dtype=np.float64)
    pF = np.asarray(pF, dtype=np.float64)
    if np.any((pN == 0) & (pF == 0)):
        raise ValueError("both likelihoods are zero; posterior undefined")
    out = pF * alpha / (pF * alpha + pN * (1.0 - alpha))
    return float(out) if out.ndim == 0 else out


def _posterior_from_ratio(r, alpha):
    # alpha / (alpha + (1 - alpha) * P(X|N) / P(X|F)), exact at r = 1
    with np.errstate(divide="ignore", over="ignore"):
        odds = np.exp(1.0 / r - r)
        return alpha / (alpha + (1.0 - alpha) * odds)


def _softmax(z):
    z = np.asarray(z, dtype=np.float64)
    top = np.max(z, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(z - top)
    return e / e.sum(axis=-1, keepdims=True)


def metric_weights(values, limits):
    """Softmax of normalized exceedances ``(S - S_lim) / S_lim``."""
    v = np.asarray(values, dtype=np.float64)
    lim = np.asarray(limits, dtype=np.float64)
    return _softmax((v - lim) / lim)


def wbf(values, limits, alpha: float = 0.01, adaptive: bool = True):
    """Fuse sources along the last axis.

    Returns ``(fused, weights, posteriors)``.  ``adaptive=False`` replaces the
    softmax weights with equal ones.
    """
    v = np.asarray(values, dtype=np.float64)
    lim = np.broadcast_to(np.asarray(limits, dtype=np.float64), v.shape)
    r = v / lim
    n = v.shape[-1]
    post = _posterior_from_ratio(r, alpha)
    if adaptive:
        w = metric_weights(v, lim)
        log_w = r - 1.0
    else:
        w = np.full(v.shape, 1.0 / n)
        log_w = np.zeros(v.shape)
    with np.errstate(divide="ignore", over="ignore"):
        log_pi = log_w - 1.0 / r  # log of w * P(X|F), up to a constant
    dead = np.all(np.isneginf(log_pi), axis=-1)
    pi = _softmax(np.where(dead[..., None], 0.0, log_pi))
    # anchored at the smallest posterior: exact when all posteriors agree and
    # never outside [min, max]
    base = post.min(axis=-1)
    fused = base + np.sum(pi * (post - base[..., None]), axis=-1)
    fused = np.where(dead, 0.0, np.clip(fused, 0.0, 1.0))
    if fused.ndim == 0:
        fused = float(fused)
    return fused, w, post


def fuse_block(readings: list[MetricReading], alpha: float = 0.01,
               adaptive: bool = True) -> BlockFused:
    if not readings:
        raise ValueError("need at least one reading")
    B, w, _ = wbf([rd.value for rd in readings], [rd.limit for rd in readings],
                  alpha, adaptive)
    return BlockFused(float(B), np.asarray(w))


def fuse_plant(blocks: list[tuple[float, float]], alpha: float = 0.01,
               threshold: float | None = None, adaptive: bool = True) -> PlantIndex:
    """Plant-wide index from ``(B, B_lim)`` pairs; alarm when PFI > threshold."""
    if not blocks:
        raise ValueError("need at least one block")
    vals = [b for b, _ in blocks]
    lims = [lim for _, lim in blocks]
    if min(lims) <= 0:
        raise ValueError("block limits must be positive")
    pfi, w, _ = wbf(vals, lims, alpha, adaptive)
    thr = alpha if threshold is None else threshold
    return PlantIndex(float(pfi), np.asarray(w), bool(pfi > thr))


def fit_block_limit(series, confidence: float = 0.99) -> float:
    """Control limit of a block's fused statistic from in-control values."""
    s = np.asarray(series, dtype=np.float64)
    if s.size < 100:
        raise DataError(f"need >= 100 in-control values, got {s.size}")
    return kde_limit(s, confidence)

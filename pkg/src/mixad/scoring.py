"""Attention-shift anomaly scores, seasonal removal, aggregation and threshold search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .evaluation import point_adjust, prf1

log = logging.getLogger(__name__)


@dataclass
class ScoreSeries:
    raw: np.ndarray  # (T, N) JSD between consecutive attention rows
    deseasonalized: np.ndarray  # (T, N)
    agg: np.ndarray  # (T,) max over features of the deseasonalized scores
    periods: list = field(default_factory=list)  # per-feature period or None


@dataclass
class Threshold:
    cut: float
    flagged: np.ndarray  # agg > cut
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


def jsd(p, q, axis: int = -1) -> np.ndarray:
    """Base-2 Jensen-Shannon divergence along ``axis``; bounded by [0, 1].

    Inputs are renormalised; ``0 log 0`` is taken as 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("jsd: distributions must be non-negative")
    p = p / p.sum(axis=axis, keepdims=True)
    q = q / q.sum(axis=axis, keepdims=True)
    both = p + q  # halving first would underflow subnormal masses to 0

    def kl(a):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a > 0, a * np.log2(2.0 * a / both), 0.0)
        return terms.sum(axis=axis)

    out = 0.5 * kl(p) + 0.5 * kl(q)
    # rounding can push identical inputs a hair below zero
    return np.clip(out, 0.0, 1.0)


def attention_scores(trace: np.ndarray, offset: int = 0) -> np.ndarray:
    """Per-node JSD between consecutive attention snapshots.

    ``trace`` is ``(S, N, m)`` with snapshot ``j`` belonging to timestamp
    ``offset + j``. Returns ``(offset + S, N)``; timestamps without a
    predecessor snapshot score 0.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 3 or trace.shape[0] < 2:
        raise ValueError(f"attention_scores: need at least 2 snapshots, got shape {trace.shape}")
    s = np.zeros((offset + trace.shape[0], trace.shape[1]))
    s[offset + 1 :] = jsd(trace[:-1], trace[1:])
    return s


def detect_period(series, flatness: float = 3.0) -> int | None:
    """Dominant period (in samples) from the real FFT, or None if the spectrum is flat.

    The DC bin is ignored. A series counts as seasonal only if the peak
    modulus is at least ``flatness`` times the median modulus.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 4:
        return None
    spectrum = np.abs(np.fft.rfft(x))[1:]
    peak = float(spectrum.max())
    if peak <= 1e-12 * max(1.0, float(np.abs(x).max())) or peak < flatness * float(np.median(spectrum)):
        return None
    k = int(np.argmax(spectrum)) + 1
    return int(round(n / k))


def _centered_moving_average(x: np.ndarray, period: int) -> np.ndarray:
    """Centred MA of width ``period`` (2xP for even P); NaN where undefined."""
    if period % 2:
        kernel = np.full(period, 1.0 / period)
    else:
        kernel = np.r_[0.5, np.ones(period - 1), 0.5] / period
    half = len(kernel) // 2
    out = np.full(x.size, np.nan)
    if x.size >= len(kernel):
        out[half : x.size - half] = np.convolve(x, kernel, mode="valid")
    return out


def seasonal_component(x: np.ndarray, period: int) -> np.ndarray:
    """Phase-mean seasonal estimate after moving-average detrending, mean-centred."""
    detrended = x - _centered_moving_average(x, period)
    phases = np.arange(x.size) % period
    means = np.zeros(period)
    for ph in range(period):
        vals = detrended[phases == ph]
        vals = vals[~np.isnan(vals)]
        means[ph] = vals.mean() if vals.size else 0.0
    means -= means.mean()
    return means[phases]


def deseasonalize(s: np.ndarray) -> tuple[np.ndarray, list]:
    """Remove a per-feature seasonal component wherever a usable period exists.

    Returns ``(s_prime, periods)``; features with no period (or a period of
    at least half the series) pass through unchanged.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("deseasonalize: scores must be finite")
    out = s.copy()
    periods: list = []
    for i in range(s.shape[1]):
        period = detect_period(s[:, i])
        if period is None or period < 2 or period >= s.shape[0] / 2:
            periods.append(None)
            continue
        periods.append(period)
        out[:, i] = s[:, i] - seasonal_component(s[:, i], period)
    return out, periods


def aggregate(s_prime: np.ndarray) -> np.ndarray:
    return np.asarray(s_prime).max(axis=1)


def score_trace(trace: np.ndarray, offset: int) -> ScoreSeries:
    raw = attention_scores(trace, offset)
    des, periods = deseasonalize(raw)
    return ScoreSeries(raw, des, aggregate(des), periods)


def best_f1_threshold(agg, labels, n_candidates: int = 200) -> Threshold:
    """Grid-search the cut with the best point-adjusted F1.

    Candidates are evenly spaced quantiles of ``agg``; the lowest cut wins
    among equal F1 values.
    """
    agg = np.asarray(agg, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if agg.shape != labels.shape:
        raise ValueError(f"best_f1_threshold: scores {agg.shape} vs labels {labels.shape}")
    if labels.all() or not labels.any():
        log.warning("labels are all %s; precision/recall are degenerate", bool(labels.any()))
    cuts = np.unique(np.quantile(agg, np.linspace(0.0, 1.0, n_candidates)))
    best = None
    for cut in cuts:
        flagged = agg > cut
        p, r, f = prf1(point_adjust(flagged, labels), labels)
        if best is None or f > best.f1:
            best = Threshold(float(cut), flagged, p, r, f)
    return best

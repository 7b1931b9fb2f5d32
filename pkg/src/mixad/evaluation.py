"""Point-adjusted detection metrics and HitRate@P% for causal-feature rankings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .interpret import rank_causes, segment_detected

log = logging.getLogger(__name__)


@dataclass
class GroundTruth:
    labels: np.ndarray
    causes: list[tuple[int, int, frozenset]] = field(default_factory=list)  # (start, end, features)


def point_adjust(pred, labels) -> np.ndarray:
    """Mark a whole labelled run as detected if any timestamp in it is predicted."""
    pred = np.asarray(pred, dtype=bool).copy()
    labels = np.asarray(labels, dtype=bool)
    if pred.shape != labels.shape:
        raise ValueError(f"point_adjust: pred {pred.shape} vs labels {labels.shape}")
    for start, end in segment_detected(labels):
        if pred[start : end + 1].any():
            pred[start : end + 1] = True
    return pred


def prf1(pred, labels) -> tuple[float, float, float]:
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def hitrate(ranked, truth, p_pct: int) -> float:
    """Fraction of ``truth`` found in the top ``floor(p_pct% * |truth|)`` of ``ranked``."""
    truth = set(truth)
    if not truth:
        raise ValueError("hitrate: empty ground-truth set")
    ranked = list(ranked)
    k = min((int(p_pct) * len(truth)) // 100, len(ranked))
    return len(truth.intersection(ranked[:k])) / len(truth)


def evaluate_run(s_prime: np.ndarray, agg: np.ndarray, threshold, truth: GroundTruth) -> dict:
    """Detection metrics plus per-segment interpretation quality.

    Each ground-truth cause segment that the point-adjusted predictions
    cover is explained over the detected run containing it; a segment with
    no flagged timestamp scores HitRate 0.
    """
    cut = float(threshold.cut if hasattr(threshold, "cut") else threshold)
    flagged = np.asarray(agg) > cut
    labels = np.asarray(truth.labels, dtype=bool)
    adjusted = point_adjust(flagged, labels)
    precision, recall, f1 = prf1(adjusted, labels)
    detected = segment_detected(adjusted)

    per_segment = []
    for start, end, causes in truth.causes:
        if not causes:
            log.warning("segment (%d, %d) has no causal features; skipped", start, end)
            continue
        hit = flagged[start : end + 1].any()
        entry = {"start": start, "end": end, "causes": sorted(causes), "detected": bool(hit)}
        if hit:
            span = next(((a, b) for a, b in detected if a <= start and end <= b), (start, end))
            seg = rank_causes(s_prime, *span)
            entry.update(
                anchor=seg.anchor,
                ranked=seg.features,
                hitrate100=hitrate(seg.features, causes, 100),
                hitrate150=hitrate(seg.features, causes, 150),
            )
        else:
            entry.update(anchor=None, ranked=[], hitrate100=0.0, hitrate150=0.0)
        per_segment.append(entry)

    def mean_of(key):
        return float(np.mean([e[key] for e in per_segment])) if per_segment else 0.0

    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "threshold": cut,
        "hitrate100": mean_of("hitrate100"),
        "hitrate150": mean_of("hitrate150"),
        "missed_segments": sum(not e["detected"] for e in per_segment),
        "per_segment": per_segment,
    }

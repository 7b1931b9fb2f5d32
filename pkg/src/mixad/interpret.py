"""Rank candidate causal features of a flagged segment by score co-movement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AnomalySegment:
    start: int
    end: int  # inclusive
    anchor: int = -1
    ranking: list[tuple[int, float]] = field(default_factory=list)  # (feature, |r|)

    @property
    def features(self) -> list[int]:
        return [f for f, _ in self.ranking]

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "anchor": self.anchor,
            "ranked": [[f, r] for f, r in self.ranking],
        }


def segment_detected(flagged) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive ``(start, end)`` pairs."""
    flags = np.asarray(flagged, dtype=bool)
    if flags.size == 0:
        return []
    padded = np.r_[False, flags, False].astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def _abs_pearson(traces: np.ndarray, ref: np.ndarray) -> np.ndarray:
    x = traces - traces.mean(axis=0)
    y = ref - ref.mean()
    sx = np.sqrt((x * x).sum(axis=0))
    sy = np.sqrt((y * y).sum())
    out = np.zeros(traces.shape[1])
    ok = (sx > 1e-12 * np.maximum(1.0, np.abs(traces).max(axis=0))) & (sy > 0)
    out[ok] = np.abs((x[:, ok] * y[:, None]).sum(axis=0) / (sx[ok] * sy))
    return np.minimum(out, 1.0)


def rank_causes(s_prime: np.ndarray, start: int, end: int) -> AnomalySegment:
    """Order features by |Pearson r| with the anchor over ``[start, end]``.

    The anchor is the feature with the highest score in the segment; it is
    always ranked first with |r| = 1. Features that are constant over the
    segment get r = 0. Single-timestamp segments have no correlation and fall
    back to ranking by the score itself. Remaining ties go to the lower index.
    """
    s_prime = np.asarray(s_prime, dtype=np.float64)
    if end < start:
        raise ValueError(f"rank_causes: empty segment ({start}, {end})")
    seg = s_prime[start : end + 1]
    anchor = int(np.argmax(seg.max(axis=0)))
    if seg.shape[0] == 1:
        strength = seg[0].copy()
    else:
        strength = _abs_pearson(seg, seg[:, anchor])
        strength[anchor] = 1.0
    order = sorted(range(seg.shape[1]), key=lambda i: (i != anchor, -strength[i], i))
    return AnomalySegment(start, end, anchor, [(i, float(strength[i])) for i in order])

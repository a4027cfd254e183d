"""Shape diagnostics for sweep curves: smoothing, unimodality, rank
correlation, and peak/threshold proximity.  Used by the self-test command
and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "UnimodalityReport",
    "moving_average3",
    "spearman",
    "unimodality_report",
]


def moving_average3(values) -> np.ndarray:
    """Centered 3-point moving average; endpoints average the window that
    fits (2 points)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        return v.copy()
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] + v[1:-1] + v[2:]) / 3.0
    out[0] = (v[0] + v[1]) / 2.0
    out[-1] = (v[-2] + v[-1]) / 2.0
    return out


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j)  # average rank of the tie group
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equally sized samples of length >= 2")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


@dataclass(frozen=True)
class UnimodalityReport:
    smoothed: np.ndarray
    peak_index: int
    interior: bool
    n_local_maxima: int
    post_peak_decline: float  # (peak - min after peak) / peak

    @property
    def unimodal(self) -> bool:
        return self.interior and self.n_local_maxima == 1


def unimodality_report(values) -> UnimodalityReport:
    """Smooth with a 3-point moving average, then report the peak location,
    whether it is interior, how many strict local maxima the smoothed curve
    has, and the relative decline after the peak."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        raise ValueError("need at least 3 grid points")
    s = moving_average3(v)
    peak = int(np.argmax(s))
    interior = 0 < peak < s.size - 1
    n_max = 0
    for i in range(1, s.size - 1):
        if s[i] > s[i - 1] and s[i] > s[i + 1]:
            n_max += 1
    tail_min = float(s[peak:].min())
    decline = (s[peak] - tail_min) / s[peak] if s[peak] > 0 else 0.0
    return UnimodalityReport(s, peak, interior, n_max, float(decline))

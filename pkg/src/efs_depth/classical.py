"""Non-learned depth from focus: per-pixel polarity reversal time mapped to focal distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encodings import BinaryMask
from .events import EventStream, time_to_focal_distance
from .tensorio import read_ten1, write_ten1


@dataclass
class SparseDepth:
    depth_map: np.ndarray  # (H, W) meters, 0 where masked out
    mask: BinaryMask

    @classmethod
    def empty(cls, height: int, width: int) -> "SparseDepth":
        return cls(np.zeros((height, width)), BinaryMask(np.zeros((height, width))))

    @classmethod
    def from_dense(cls, depth: np.ndarray, mask: np.ndarray) -> "SparseDepth":
        if isinstance(mask, BinaryMask):
            mask = mask.values
        m = (np.asarray(mask) > 0).astype(np.float64)
        return cls(np.where(m > 0, depth, 0.0).astype(np.float64), BinaryMask(m))

    def save(self, depth_path, mask_path):
        write_ten1(depth_path, self.depth_map)
        write_ten1(mask_path, self.mask.values)

    @classmethod
    def load(cls, depth_path, mask_path) -> "SparseDepth":
        return cls.from_dense(read_ten1(depth_path).astype(np.float64), read_ten1(mask_path))


@dataclass(frozen=True)
class ReversalConfig:
    min_events_per_side: int = 2
    smoothing_window: int = 3

    def __post_init__(self):
        if self.min_events_per_side < 1:
            raise ValueError("min_events_per_side must be >= 1")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")


def majority_smooth(polarities: np.ndarray, window: int) -> np.ndarray:
    """Sign of the windowed polarity sum; ties keep the original polarity."""
    p = np.asarray(polarities, dtype=np.int64)
    if window <= 1 or p.size == 0:
        return p.copy()
    half = window // 2
    csum = np.concatenate([[0], np.cumsum(p)])
    idx = np.arange(p.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, p.size)
    s = csum[hi] - csum[lo]
    return np.where(s == 0, p, np.sign(s))


def polarity_runs(polarities: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges of constant polarity."""
    if len(polarities) == 0:
        return []
    cuts = np.flatnonzero(np.diff(polarities) != 0) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(polarities)]])
    return list(zip(starts.tolist(), ends.tolist()))


def detect_reversal_time(times, polarities, cfg: ReversalConfig = ReversalConfig()) -> float | None:
    """Time at which a pixel's event polarity flips, or None.

    After majority smoothing the sequence splits into runs of one polarity.
    Among adjacent opposite runs that both hold ``min_events_per_side`` events
    the longest pair wins (earliest on ties); the reversal time is halfway
    between its last leading event and first trailing event.
    """
    times = np.asarray(times, dtype=np.float64)
    smoothed = majority_smooth(polarities, cfg.smoothing_window)
    runs = polarity_runs(smoothed)
    best, best_score = None, -1
    for (s0, e0), (s1, e1) in zip(runs, runs[1:]):
        n0, n1 = e0 - s0, e1 - s1
        if n0 < cfg.min_events_per_side or n1 < cfg.min_events_per_side:
            continue
        if n0 + n1 > best_score:
            best, best_score = (e0 - 1, s1), n0 + n1
    if best is None:
        return None
    return 0.5 * (times[best[0]] + times[best[1]])


def estimate_sparse_depth(stream: EventStream, cfg: ReversalConfig = ReversalConfig()) -> SparseDepth:
    result = SparseDepth.empty(stream.height, stream.width)
    if stream.count == 0:
        return result
    pix = stream.y * stream.width + stream.x
    order = np.lexsort((stream.t, pix))
    pix_sorted = pix[order]
    t_sorted, p_sorted = stream.t[order], stream.p[order]
    uniq, starts = np.unique(pix_sorted, return_index=True)
    ends = np.append(starts[1:], pix_sorted.size)
    depth = result.depth_map.reshape(-1)
    mask = result.mask.values.reshape(-1)
    for pixel, a, b in zip(uniq.tolist(), starts.tolist(), ends.tolist()):
        t_star = detect_reversal_time(t_sorted[a:b], p_sorted[a:b], cfg)
        if t_star is None:
            continue
        depth[pixel] = time_to_focal_distance(stream.sweep, t_star)
        mask[pixel] = 1.0
    return result

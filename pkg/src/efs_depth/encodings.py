"""Network inputs built from an event stream: voxel grid, depth surface and event mask."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .events import EventStream, time_to_focal_distance


@dataclass(frozen=True)
class EncodingConfig:
    num_bins: int = 8
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.height < 1 or self.width < 1:
            raise ValueError("height and width must be positive")


@dataclass
class VoxelGrid:
    values: np.ndarray  # (N, 2, H, W); channel 0 positive, 1 negative
    degenerate: bool = False


@dataclass
class DepthSurface:
    values: np.ndarray  # (N, 2, H, W) focal distances in meters, 0 where no event


@dataclass
class BinaryMask:
    values: np.ndarray  # (H, W) of 0/1

    @property
    def count(self) -> int:
        return int(self.values.sum())


def _check_size(stream: EventStream, cfg: EncodingConfig):
    if (stream.height, stream.width) != (cfg.height, cfg.width):
        raise ValueError(
            f"stream is {stream.height}x{stream.width} but encoding expects {cfg.height}x{cfg.width}"
        )


def polarity_channel(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, 0, 1).astype(np.int64)


def scaled_times(stream: EventStream, num_bins: int) -> tuple[np.ndarray, bool]:
    """Event times mapped linearly onto [0, N-1] using the first and last event."""
    t = stream.t
    if t.size == 0:
        return t.copy(), False
    span = t[-1] - t[0]
    if span <= 0:
        return np.zeros_like(t), t.size > 1
    return (num_bins - 1) * (t - t[0]) / span, False


def build_voxel_grid(stream: EventStream, cfg: EncodingConfig) -> VoxelGrid:
    _check_size(stream, cfg)
    grid = np.zeros((cfg.num_bins, 2, cfg.height, cfg.width), dtype=np.float64)
    st, degenerate = scaled_times(stream, cfg.num_bins)
    if degenerate:
        warnings.warn("zero-duration event stream: all voxel mass placed in bin 0", RuntimeWarning, stacklevel=2)
    if stream.count:
        kernels.voxel_accumulate(grid, st, stream.x, stream.y, polarity_channel(stream.p))
    return VoxelGrid(grid, degenerate)


def bin_edges(stream: EventStream, num_bins: int) -> np.ndarray:
    """N+1 edges splitting [t_first, t_last] into equal half-open bins (last one closed)."""
    t0, t1 = stream.t[0], stream.t[-1]
    return t0 + (t1 - t0) * np.arange(num_bins + 1) / num_bins


def bin_index(stream: EventStream, num_bins: int) -> np.ndarray:
    if stream.count == 0 or stream.t[-1] <= stream.t[0]:
        return np.zeros(stream.count, dtype=np.int64)
    edges = bin_edges(stream, num_bins)
    idx = np.searchsorted(edges, stream.t, side="right") - 1
    return np.clip(idx, 0, num_bins - 1)


def build_depth_surface(stream: EventStream, cfg: EncodingConfig) -> DepthSurface:
    """Latest event time per (bin, polarity, pixel), mapped to focal distance."""
    _check_size(stream, cfg)
    shape = (cfg.num_bins, 2, cfg.height, cfg.width)
    surface = np.zeros(shape, dtype=np.float64)
    if stream.count == 0:
        return DepthSurface(surface)
    latest = np.full(shape, -np.inf).reshape(-1)
    idx = np.ravel_multi_index(
        (bin_index(stream, cfg.num_bins), polarity_channel(stream.p), stream.y, stream.x), shape
    )
    np.maximum.at(latest, idx, stream.t)
    hit = np.isfinite(latest)
    flat = surface.reshape(-1)
    flat[hit] = time_to_focal_distance(stream.sweep, latest[hit])
    return DepthSurface(surface)


def build_mask(stream: EventStream, cfg: EncodingConfig) -> BinaryMask:
    _check_size(stream, cfg)
    mask = np.zeros((cfg.height, cfg.width), dtype=np.float64)
    mask[stream.y, stream.x] = 1.0
    return BinaryMask(mask)


def encode(stream: EventStream, cfg: EncodingConfig):
    """(voxel, surface, mask) in one call."""
    return build_voxel_grid(stream, cfg), build_depth_surface(stream, cfg), build_mask(stream, cfg)

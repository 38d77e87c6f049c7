"""Event generation from rendered focal sweeps, noise injection and the EFS1 file format."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .optics import LuminanceImage


@dataclass(frozen=True)
class FocalSweep:
    """Focal distance moving linearly from ``d_f_start_m`` to ``d_f_end_m`` over ``duration_s``."""

    d_f_start_m: float = 1.0
    d_f_end_m: float = 10.0
    duration_s: float = 1.0
    num_samples: int = 64
    t_start_s: float = 0.0

    def __post_init__(self):
        if not self.d_f_end_m > self.d_f_start_m > 0:
            raise ValueError(f"need d_f_end_m > d_f_start_m > 0, got {self.d_f_start_m}, {self.d_f_end_m}")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.num_samples < 2:
            raise ValueError(f"num_samples must be >= 2, got {self.num_samples}")

    @property
    def t_end_s(self) -> float:
        return self.t_start_s + self.duration_s

    @property
    def step_m(self) -> float:
        """Focal distance between consecutive samples."""
        return (self.d_f_end_m - self.d_f_start_m) / (self.num_samples - 1)

    def sample_times(self) -> np.ndarray:
        k = np.arange(self.num_samples)
        return self.t_start_s + self.duration_s * k / (self.num_samples - 1)

    def sample_distances(self) -> np.ndarray:
        k = np.arange(self.num_samples)
        return self.d_f_start_m + (self.d_f_end_m - self.d_f_start_m) * k / (self.num_samples - 1)


class SweepRangeError(ValueError):
    pass


def time_to_focal_distance(sweep: FocalSweep, t):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < sweep.t_start_s) | (t_arr > sweep.t_end_s)):
        raise SweepRangeError(f"time outside sweep span [{sweep.t_start_s}, {sweep.t_end_s}]")
    d = sweep.d_f_start_m + (t_arr - sweep.t_start_s) / sweep.duration_s * (sweep.d_f_end_m - sweep.d_f_start_m)
    return float(d) if d.ndim == 0 else d


def focal_distance_to_time(sweep: FocalSweep, d_f):
    d_arr = np.asarray(d_f, dtype=np.float64)
    if np.any((d_arr < sweep.d_f_start_m) | (d_arr > sweep.d_f_end_m)):
        raise SweepRangeError(f"focal distance outside [{sweep.d_f_start_m}, {sweep.d_f_end_m}]")
    t = sweep.t_start_s + (d_arr - sweep.d_f_start_m) / (sweep.d_f_end_m - sweep.d_f_start_m) * sweep.duration_s
    return float(t) if t.ndim == 0 else t


@dataclass(frozen=True)
class EventSimConfig:
    threshold_c: float = 0.15
    log_eps: float = 1e-3
    noise_rate_hz_per_px: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.threshold_c > 0:
            raise ValueError(f"threshold_c must be positive, got {self.threshold_c}")
        if not self.log_eps > 0:
            raise ValueError(f"log_eps must be positive, got {self.log_eps}")
        if not self.noise_rate_hz_per_px >= 0:
            raise ValueError(f"noise_rate_hz_per_px must be >= 0, got {self.noise_rate_hz_per_px}")


class Event(NamedTuple):
    x: int
    y: int
    t_s: float
    polarity: int


class EventStream:
    """Time-sorted events stored column-wise."""

    def __init__(self, x, y, t, p, width: int, height: int, sweep: FocalSweep, *, check: bool = True):
        self.x = np.asarray(x, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        self.sweep = sweep
        if check:
            self.validate()

    @classmethod
    def empty(cls, width: int, height: int, sweep: FocalSweep) -> "EventStream":
        return cls([], [], [], [], width, height, sweep)

    def validate(self):
        n = self.t.shape[0]
        if not (self.x.shape == self.y.shape == self.p.shape == (n,)):
            raise ValueError("event columns must have equal length")
        if n == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be nondecreasing")
        if np.any((self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)):
            raise ValueError("event coordinates outside the sensor")
        if not np.all((self.p == 1) | (self.p == -1)):
            raise ValueError("polarity must be +1 or -1")
        if self.t[0] < self.sweep.t_start_s or self.t[-1] > self.sweep.t_end_s:
            raise ValueError("event timestamps outside the sweep span")

    @property
    def count(self) -> int:
        return int(self.t.shape[0])

    def __len__(self):
        return self.count

    def __iter__(self):
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.sweep == other.sweep
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self):
        return f"EventStream(count={self.count}, size={self.width}x{self.height})"

    def pixel_events(self, x: int, y: int):
        """(times, polarities) of one pixel, in time order."""
        sel = (self.x == x) & (self.y == y)
        return self.t[sel], self.p[sel]

    def shifted(self, dt: float) -> "EventStream":
        """Same events and sweep moved by ``dt`` seconds."""
        sweep = FocalSweep(
            self.sweep.d_f_start_m, self.sweep.d_f_end_m, self.sweep.duration_s,
            self.sweep.num_samples, self.sweep.t_start_s + dt,
        )
        return EventStream(self.x, self.y, self.t + dt, self.p, self.width, self.height, sweep)


def sort_events(x, y, t, p, width: int):
    order = np.lexsort((y * width + x, t))
    return x[order], y[order], t[order], p[order]


def simulate_events(frames: Sequence[LuminanceImage], cfg: EventSimConfig, sweep: FocalSweep | None = None) -> EventStream:
    """Log-intensity threshold events from a sequence of frames.

    Log luminance is interpolated linearly between frames; each time a pixel's
    signal reaches its reference level plus or minus ``threshold_c`` an event
    is emitted at the interpolated crossing time and the reference moves by
    one threshold.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    shape = frames[0].values.shape
    for f in frames:
        if f.values.shape != shape:
            raise ValueError(f"frame dimension mismatch: {f.values.shape} vs {shape}")
    times = np.array([f.timestamp_s for f in frames], dtype=np.float64)
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("frame timestamps must be uniformly spaced")
    height, width = shape
    if sweep is None:
        sweep = FocalSweep(
            frames[0].focal_distance_m, frames[-1].focal_distance_m,
            times[-1] - times[0], len(frames), times[0],
        )

    log_frames = np.log(np.stack([f.values.reshape(-1) for f in frames]) + cfg.log_eps)
    pix, t, p = kernels.simulate_pixels(log_frames, times, cfg.threshold_c)
    # crossing arithmetic can overshoot the closing frame time by an ulp
    np.clip(t, max(times[0], sweep.t_start_s), min(times[-1], sweep.t_end_s), out=t)
    x, y = pix % width, pix // width
    x, y, t, p = sort_events(x, y, t, p, width)
    return EventStream(x, y, t, p, width, height, sweep)


def inject_noise(stream: EventStream, cfg: EventSimConfig) -> EventStream:
    """Add uniformly timed random-polarity events at ``cfg.noise_rate_hz_per_px``."""
    rate = cfg.noise_rate_hz_per_px
    if rate < 0:
        raise ValueError("noise rate must be nonnegative")
    if rate == 0:
        return stream
    rng = np.random.default_rng(cfg.seed)
    sweep = stream.sweep
    expected = rate * sweep.duration_s * stream.width * stream.height
    n = int(rng.poisson(expected))
    nx = rng.integers(0, stream.width, n)
    ny = rng.integers(0, stream.height, n)
    nt = sweep.t_start_s + rng.random(n) * sweep.duration_s
    npol = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    x, y, t, p = sort_events(
        np.concatenate([stream.x, nx]), np.concatenate([stream.y, ny]),
        np.concatenate([stream.t, nt]), np.concatenate([stream.p, npol]), stream.width,
    )
    return EventStream(x, y, t, p, stream.width, stream.height, sweep)


# --- EFS1 ------------------------------------------------------------------

EFS1_MAGIC = b"EFS1"
_EFS1_HEADER = struct.Struct("<4sIIQdddd")
EFS1_RECORD = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])


def write_efs1(path, stream: EventStream):
    """Write ``stream`` atomically (temp file + rename)."""
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValueError("EFS1 coordinates are limited to 16 bits")
    records = np.zeros(stream.count, dtype=EFS1_RECORD)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    sweep = stream.sweep
    header = _EFS1_HEADER.pack(
        EFS1_MAGIC, stream.width, stream.height, stream.count,
        sweep.t_start_s, sweep.duration_s, sweep.d_f_start_m, sweep.d_f_end_m,
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())
    os.replace(tmp, path)


def read_efs1(path, num_samples: int = 2) -> EventStream:
    """Read an EFS1 file. The format does not carry the sweep's sample count."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _EFS1_HEADER.size:
        raise ValueError(f"{path}: truncated EFS1 header")
    magic, width, height, count, t_start, duration, d_start, d_end = _EFS1_HEADER.unpack_from(raw)
    if magic != EFS1_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_EFS1_HEADER.size:]
    if len(body) != count * EFS1_RECORD.itemsize:
        raise ValueError(f"{path}: expected {count} records, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=EFS1_RECORD)
    sweep = FocalSweep(d_start, d_end, duration, num_samples, t_start)
    return EventStream(
        rec["x"].astype(np.int64), rec["y"].astype(np.int64), rec["t"].copy(), rec["p"].copy(),
        width, height, sweep,
    )

"""Procedural scenes: textured wall plus fronto-parallel textured rectangles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .optics import Scene


@dataclass(frozen=True)
class TextureConfig:
    sigma_px: float = 0.8      # band limit of the noise
    contrast: float = 0.8      # peak-to-peak luminance span
    mean: float = 0.5


@dataclass(frozen=True)
class SceneConfig:
    num_objects: int = 4
    depth_range_m: tuple[float, float] = (1.5, 8.0)
    wall_depth_m: float = 9.0
    texture: TextureConfig = TextureConfig()
    height: int = 64
    width: int = 64
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.depth_range_m
        if not 0 < lo < hi:
            raise ValueError(f"depth range must satisfy 0 < min < max, got {self.depth_range_m}")
        if self.wall_depth_m < hi:
            raise ValueError("wall_depth_m must be >= the maximum object depth")
        if self.num_objects < 0 or self.height < 1 or self.width < 1:
            raise ValueError("num_objects must be >= 0 and image size positive")

    def check_sweep(self, sweep):
        lo = self.depth_range_m[0]
        if lo < sweep.d_f_start_m or self.wall_depth_m > sweep.d_f_end_m:
            raise ValueError(
                f"scene depths [{lo}, {self.wall_depth_m}] m fall outside the sweep "
                f"[{sweep.d_f_start_m}, {sweep.d_f_end_m}] m"
            )


def noise_texture(rng: np.random.Generator, shape, tex: TextureConfig) -> np.ndarray:
    """Band-limited noise stretched to ``mean +- contrast/2``."""
    field = rng.standard_normal(shape)
    if tex.sigma_px > 0:
        field = gaussian_filter(field, tex.sigma_px, mode="wrap")
    lo, hi = field.min(), field.max()
    unit = (field - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    return np.clip(tex.mean + tex.contrast * (unit - 0.5), 0.0, 1.0)


def generate_scene(cfg: SceneConfig) -> Scene:
    """Wall at ``wall_depth_m`` with ``num_objects`` rectangles drawn far to near."""
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    image = noise_texture(rng, (h, w), cfg.texture)
    depth = np.full((h, w), float(cfg.wall_depth_m))
    lo, hi = cfg.depth_range_m
    objects = []
    for _ in range(cfg.num_objects):
        d = float(rng.uniform(lo, hi))
        rh = int(rng.integers(max(2, h // 8), max(3, h // 2) + 1))
        rw = int(rng.integers(max(2, w // 8), max(3, w // 2) + 1))
        top = int(rng.integers(0, max(1, h - rh + 1)))
        left = int(rng.integers(0, max(1, w - rw + 1)))
        tex = noise_texture(rng, (rh, rw), cfg.texture)
        objects.append((d, top, left, tex))
    # painter's order: far first, so nearer rectangles occlude
    for d, top, left, tex in sorted(objects, key=lambda o: -o[0]):
        rh, rw = tex.shape
        image[top:top + rh, left:left + rw] = tex[: h - top, : w - left]
        depth[top:top + rh, left:left + rw] = d
    return Scene(image, depth)


def plane_scene(depth_m: float, height: int = 64, width: int = 64, seed: int = 0,
                texture: TextureConfig = TextureConfig()) -> Scene:
    """Single textured fronto-parallel plane."""
    rng = np.random.default_rng(seed)
    return Scene(noise_texture(rng, (height, width), texture), np.full((height, width), float(depth_m)))

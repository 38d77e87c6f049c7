"""Thin-lens defocus: circle of confusion, Gaussian PSFs and focal sweep rendering."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._gauss import IMPULSE_SIGMA_PX, gaussian_taps


class InvalidOpticsError(ValueError):
    pass


@dataclass(frozen=True)
class LensConfig:
    focal_length_m: float = 0.05
    f_number: float = 8.0
    pixel_pitch_m: float = 3e-7
    k_sigma: float = 0.5
    # Blur saturation; kernels wider than this carry no extra focus cue at desk scale.
    max_sigma_px: float | None = 6.0

    def __post_init__(self):
        for name in ("focal_length_m", "f_number", "pixel_pitch_m", "k_sigma"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidOpticsError(f"{name} must be positive and finite, got {value!r}")
        if self.max_sigma_px is not None and not self.max_sigma_px > 0:
            raise InvalidOpticsError(f"max_sigma_px must be positive, got {self.max_sigma_px!r}")


@dataclass(frozen=True)
class Scene:
    """All-in-focus luminance image plus its per-pixel metric depth."""

    aif_image: np.ndarray
    depth_map: np.ndarray

    def __post_init__(self):
        aif = np.asarray(self.aif_image, dtype=np.float64)
        depth = np.asarray(self.depth_map, dtype=np.float64)
        if aif.ndim != 2 or aif.shape != depth.shape:
            raise ValueError(f"aif_image {aif.shape} and depth_map {depth.shape} must be matching 2-D grids")
        if not np.all(depth > 0):
            raise ValueError("all depths must be strictly positive")
        object.__setattr__(self, "aif_image", aif)
        object.__setattr__(self, "depth_map", depth)

    @property
    def height(self) -> int:
        return self.aif_image.shape[0]

    @property
    def width(self) -> int:
        return self.aif_image.shape[1]


@dataclass(frozen=True)
class LuminanceImage:
    values: np.ndarray
    timestamp_s: float
    focal_distance_m: float


@dataclass(frozen=True)
class PsfKernel:
    sigma_px: float
    radius_px: int
    weights: np.ndarray

    @property
    def is_impulse(self) -> bool:
        return self.radius_px == 0


def coc_diameter(lens: LensConfig, d_f, d_o):
    """Blur-circle diameter in meters for focal distance ``d_f`` and object depth ``d_o``.

    Works on scalars or arrays of object depths.
    """
    d_o_arr = np.asarray(d_o, dtype=np.float64)
    if np.any(~(d_o_arr > 0)):
        raise InvalidOpticsError(f"object depth must be positive, got {d_o!r}")
    F = lens.focal_length_m
    if not d_f > F:
        raise InvalidOpticsError(f"focal distance {d_f!r} must exceed focal length {F!r}")
    s = np.abs(d_f - d_o_arr) / d_o_arr * (F * F / (lens.f_number * (d_f - F)))
    if np.ndim(s) == 0:
        return float(s)
    return s


def sigma_from_coc(lens: LensConfig, s):
    """PSF standard deviation in pixels, saturated at ``lens.max_sigma_px``."""
    sigma = lens.k_sigma * np.asarray(s, dtype=np.float64) / lens.pixel_pitch_m
    if lens.max_sigma_px is not None:
        sigma = np.minimum(sigma, lens.max_sigma_px)
    return sigma


def psf_from_coc(lens: LensConfig, s: float) -> PsfKernel:
    if s < 0:
        raise InvalidOpticsError(f"CoC diameter must be nonnegative, got {s!r}")
    sigma = float(sigma_from_coc(lens, s))
    weights = gaussian_taps(sigma)
    return PsfKernel(sigma_px=sigma, radius_px=weights.shape[0] // 2, weights=weights)


def sigma_map(scene: Scene, lens: LensConfig, d_f: float) -> np.ndarray:
    return sigma_from_coc(lens, coc_diameter(lens, d_f, scene.depth_map))


def render_defocused(scene: Scene, lens: LensConfig, d_f: float, timestamp_s: float = 0.0) -> LuminanceImage:
    """Spatially varying Gaussian blur, each output pixel using the PSF of its own depth.

    Offsets falling outside the image are mirror-reflected. The sum is formed
    as ``I(x) + sum_r w(r) (I(x - r) - I(x))`` so constant regions and
    impulse pixels come back bit-identical.
    """
    sigmas = sigma_map(scene, lens, d_f)
    values = kernels.render_gather(scene.aif_image, sigmas)
    return LuminanceImage(values=values, timestamp_s=float(timestamp_s), focal_distance_m=float(d_f))


def render_focal_sweep(scene: Scene, lens: LensConfig, sweep) -> list[LuminanceImage]:
    """One defocused frame per sweep sample, ordered by time."""
    if sweep.num_samples < 2:
        raise ValueError("a focal sweep needs at least 2 samples")
    times = sweep.sample_times()
    distances = sweep.sample_distances()
    return [render_defocused(scene, lens, d, t) for t, d in zip(times, distances)]

import math

import numpy as np

# Below this width a sampled Gaussian is indistinguishable from a single tap.
IMPULSE_SIGMA_PX = 0.25


def gaussian_taps(sigma_px: float) -> np.ndarray:
    """Normalized (2r+1)^2 Gaussian taps with r = ceil(3 sigma); impulse below the cutoff."""
    if sigma_px < IMPULSE_SIGMA_PX:
        return np.ones((1, 1))
    radius = int(math.ceil(3.0 * sigma_px))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    r2 = offsets[:, None] ** 2 + offsets[None, :] ** 2
    w = np.exp(-r2 / (2.0 * sigma_px * sigma_px))
    return w / w.sum()

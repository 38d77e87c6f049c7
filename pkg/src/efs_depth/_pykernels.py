"""Pure numpy versions of the hot loops. Semantics match ``_ckernels.pyx``."""
import numpy as np

from ._gauss import IMPULSE_SIGMA_PX


def reflect_index(idx, n):
    # numpy "reflect" padding (edge not repeated), valid for any offset.
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def render_gather(image, sigmas):
    image = np.ascontiguousarray(image, dtype=np.float64)
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    h, w = image.shape
    out = image.copy()
    rows, cols = np.nonzero(sigmas >= IMPULSE_SIGMA_PX)
    if rows.size == 0:
        return out
    centre = image[rows, cols]
    sig = sigmas[rows, cols]
    radius = np.ceil(3.0 * sig)
    big = int(radius.max())
    offsets = np.arange(-big, big + 1, dtype=np.float64)
    # separable taps per pixel, zero outside that pixel's own window
    g = np.exp(-offsets[:, None] ** 2 / (2.0 * sig * sig)[None, :])
    g *= np.abs(offsets)[:, None] <= radius[None, :]
    norm = g.sum(axis=0) ** 2
    src_cols = [reflect_index(cols - dx, w) for dx in range(-big, big + 1)]
    acc = np.zeros(rows.shape[0])
    for iy, dy in enumerate(range(-big, big + 1)):
        if not g[iy].any():
            continue
        src_r = reflect_index(rows - dy, h)
        row_acc = np.zeros(rows.shape[0])
        for ix in range(2 * big + 1):
            row_acc += g[ix] * (image[src_r, src_cols[ix]] - centre)
        acc += g[iy] * row_acc
    out[rows, cols] = centre + acc / norm
    return out


def simulate_pixels(log_frames, times, threshold):
    """Threshold crossings of per-pixel piecewise-linear log signals.

    ``log_frames`` is (K, P); returns (pixel, t, polarity) arrays, unsorted.
    """
    log_frames = np.ascontiguousarray(log_frames, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    c = float(threshold)
    n_frames, n_pix = log_frames.shape
    base = log_frames[0]
    level = np.zeros(n_pix)  # integer-valued reference index, kept as float
    out_pix, out_t, out_p = [], [], []
    for k in range(n_frames - 1):
        a = log_frames[k]
        b = log_frames[k + 1]
        t0 = times[k]
        dt = times[k + 1] - t0

        m_up = np.floor((b - base) / c)
        m_up = np.where(base + (m_up + 1.0) * c <= b, m_up + 1.0, m_up)
        m_up = np.where(base + m_up * c > b, m_up - 1.0, m_up)
        m_dn = np.ceil((b - base) / c)
        m_dn = np.where(base + (m_dn - 1.0) * c >= b, m_dn - 1.0, m_dn)
        m_dn = np.where(base + m_dn * c < b, m_dn + 1.0, m_dn)

        new_level = level.copy()
        rising = b > a
        falling = b < a
        new_level[rising] = np.maximum(level[rising], m_up[rising])
        new_level[falling] = np.minimum(level[falling], m_dn[falling])
        counts = np.abs(new_level - level).astype(np.int64)
        if counts.sum() == 0:
            continue
        pix = np.repeat(np.arange(n_pix), counts)
        starts = np.cumsum(counts) - counts
        step = (np.arange(pix.shape[0]) - np.repeat(starts, counts) + 1).astype(np.float64)
        sign = np.where(rising, 1.0, -1.0)[pix]
        lev = level[pix] + sign * step
        crossing = base[pix] + lev * c
        t = t0 + (crossing - a[pix]) / (b[pix] - a[pix]) * dt
        out_pix.append(pix)
        out_t.append(t)
        out_p.append(sign.astype(np.int8))
        level = new_level
    if not out_pix:
        return np.zeros(0, np.int64), np.zeros(0, np.float64), np.zeros(0, np.int8)
    return np.concatenate(out_pix), np.concatenate(out_t), np.concatenate(out_p)


def voxel_accumulate(grid, scaled_t, x, y, channel):
    """Add linear-kernel weights of each event into ``grid`` (N, 2, H, W) in place."""
    n_bins = grid.shape[0]
    flat = grid.reshape(-1)
    h, w = grid.shape[2], grid.shape[3]
    lo = np.floor(scaled_t).astype(np.int64)
    for i in (lo, lo + 1):
        weight = np.maximum(0.0, 1.0 - np.abs(scaled_t - i))
        ok = (i >= 0) & (i < n_bins) & (weight > 0)
        idx = ((i[ok] * 2 + channel[ok]) * h + y[ok]) * w + x[ok]
        np.add.at(flat, idx, weight[ok])
    return grid

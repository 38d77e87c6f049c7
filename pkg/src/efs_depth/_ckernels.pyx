# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Arithmetic mirrors ``_pykernels`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, ceil, floor, fabs

cnp.import_array()

cdef double IMPULSE_SIGMA_PX = 0.25




def render_gather(image, sigmas):
    cdef cnp.float64_t[:, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] sig = np.ascontiguousarray(sigmas, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, dy, dx, radius = 0, side
    cdef double s, centre, wsum = 1.0, acc, inv2s2, cached = -1.0
    cdef double smax = 0.0
    for r in range(h):
        for c in range(w):
            if sig[r, c] > smax:
                smax = sig[r, c]
    cdef Py_ssize_t rmax = <Py_ssize_t>ceil(3.0 * smax)
    side = 2 * rmax + 1
    table_arr = np.zeros((side, side), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] table = table_arr
    cdef cnp.float64_t[:, ::1] pad = np.pad(np.asarray(img), rmax, mode="reflect")
    with nogil:
        for r in range(h):
            for c in range(w):
                s = sig[r, c]
                centre = img[r, c]
                if s < IMPULSE_SIGMA_PX:
                    out[r, c] = centre
                    continue
                if s != cached:
                    # neighbouring pixels usually share a depth, hence a kernel
                    radius = <Py_ssize_t>ceil(3.0 * s)
                    inv2s2 = 2.0 * s * s
                    wsum = 0.0
                    for dy in range(-radius, radius + 1):
                        for dx in range(-radius, radius + 1):
                            table[dy + radius, dx + radius] = exp(-<double>(dy * dy + dx * dx) / inv2s2)
                            wsum += table[dy + radius, dx + radius]
                    cached = s
                acc = 0.0
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        acc += table[dy + radius, dx + radius] * (
                            pad[r - dy + rmax, c - dx + rmax] - centre)
                out[r, c] = centre + acc / wsum
    return out_arr


def simulate_pixels(log_frames, times, double threshold):
    cdef cnp.float64_t[:, ::1] lf = np.ascontiguousarray(log_frames, dtype=np.float64)
    cdef cnp.float64_t[::1] ts = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t n_frames = lf.shape[0], n_pix = lf.shape[1]
    cdef Py_ssize_t p, k, total = 0, j
    cdef double base, level, a, b, t0, dt, crossing
    cdef double c = threshold

    # pass 1: count, pass 2: fill
    for p in range(n_pix):
        base = lf[0, p]
        level = 0.0
        for k in range(n_frames - 1):
            a = lf[k, p]
            b = lf[k + 1, p]
            if b > a:
                while base + (level + 1.0) * c <= b:
                    level += 1.0
                    total += 1
            elif b < a:
                while base + (level - 1.0) * c >= b:
                    level -= 1.0
                    total += 1

    pix_arr = np.empty(total, dtype=np.int64)
    t_arr = np.empty(total, dtype=np.float64)
    pol_arr = np.empty(total, dtype=np.int8)
    cdef cnp.int64_t[::1] pix = pix_arr
    cdef cnp.float64_t[::1] tout = t_arr
    cdef cnp.int8_t[::1] pol = pol_arr
    j = 0
    with nogil:
        for p in range(n_pix):
            base = lf[0, p]
            level = 0.0
            for k in range(n_frames - 1):
                a = lf[k, p]
                b = lf[k + 1, p]
                t0 = ts[k]
                dt = ts[k + 1] - t0
                if b > a:
                    while base + (level + 1.0) * c <= b:
                        level += 1.0
                        crossing = base + level * c
                        pix[j] = p
                        tout[j] = t0 + (crossing - a) / (b - a) * dt
                        pol[j] = 1
                        j += 1
                elif b < a:
                    while base + (level - 1.0) * c >= b:
                        level -= 1.0
                        crossing = base + level * c
                        pix[j] = p
                        tout[j] = t0 + (crossing - a) / (b - a) * dt
                        pol[j] = -1
                        j += 1
    return pix_arr, t_arr, pol_arr


def voxel_accumulate(grid, scaled_t, x, y, channel):
    cdef cnp.float64_t[:, :, :, ::1] g = grid
    cdef cnp.float64_t[::1] st = np.ascontiguousarray(scaled_t, dtype=np.float64)
    cdef cnp.int64_t[::1] xs = np.ascontiguousarray(x, dtype=np.int64)
    cdef cnp.int64_t[::1] ys = np.ascontiguousarray(y, dtype=np.int64)
    cdef cnp.int64_t[::1] ch = np.ascontiguousarray(channel, dtype=np.int64)
    cdef Py_ssize_t n_bins = g.shape[0], m = st.shape[0], e, i
    cdef double lo, wt
    with nogil:
        for e in range(m):
            lo = floor(st[e])
            for i in range(<Py_ssize_t>lo, <Py_ssize_t>lo + 2):
                wt = 1.0 - fabs(st[e] - i)
                if wt > 0.0 and i >= 0 and i < n_bins:
                    g[i, ch[e], ys[e], xs[e]] += wt
    return grid

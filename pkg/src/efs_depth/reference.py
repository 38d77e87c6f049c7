"""Slow, loop-based reference implementations used to cross-check the fast paths."""
from __future__ import annotations

import math

import numpy as np


def coc_scalar(focal_length: float, f_number: float, d_focus: float, d_obj: float) -> float:
    return abs(d_focus - d_obj) / d_obj * focal_length ** 2 / (f_number * (d_focus - focal_length))


def scan_events(log_frames: np.ndarray, times: np.ndarray, threshold: float, oversample: int = 100):
    """Per-pixel threshold scanner on a densely resampled signal.

    The piecewise-linear log signal is sampled ``oversample`` times per frame
    interval; an event is stamped at the first sample at or past each level.
    Returns a list (one entry per pixel) of (times, polarities).
    """
    log_frames = np.asarray(log_frames, dtype=np.float64)
    n_frames, n_pix = log_frames.shape
    out = []
    for j in range(n_pix):
        base = log_frames[0, j]
        level = 0
        ts, ps = [], []
        for k in range(n_frames - 1):
            a, b = log_frames[k, j], log_frames[k + 1, j]
            t0, t1 = times[k], times[k + 1]
            for i in range(1, oversample + 1):
                s = i / oversample
                value = (1.0 - s) * a + s * b
                t = (1.0 - s) * t0 + s * t1
                while value >= base + (level + 1) * threshold:
                    level += 1
                    ts.append(t)
                    ps.append(1)
                while value <= base + (level - 1) * threshold:
                    level -= 1
                    ts.append(t)
                    ps.append(-1)
        out.append((np.array(ts), np.array(ps, dtype=np.int8)))
    return out


def reconstruction_residual(log_frames, times, threshold, pix_events) -> float:
    """Largest |log signal - (start + c * sum of polarities so far)| over all frames and pixels."""
    log_frames = np.asarray(log_frames, dtype=np.float64)
    worst = 0.0
    for j, (ts, ps) in enumerate(pix_events):
        for k, tk in enumerate(times):
            recon = log_frames[0, j] + threshold * float(np.sum(ps[ts <= tk]))
            worst = max(worst, abs(log_frames[k, j] - recon))
    return worst


def voxel_grid_loop(xs, ys, ts, ps, num_bins, height, width):
    grid = np.zeros((num_bins, 2, height, width))
    if len(ts) == 0:
        return grid
    t0, t1 = ts[0], ts[-1]
    for x, y, t, p in zip(xs, ys, ts, ps):
        tt = 0.0 if t1 == t0 else (num_bins - 1) * (t - t0) / (t1 - t0)
        ch = 0 if p > 0 else 1
        for i in range(num_bins):
            grid[i, ch, y, x] += max(0.0, 1.0 - abs(tt - i))
    return grid


def depth_surface_loop(xs, ys, ts, ps, num_bins, height, width, d_start, d_end, t_start, duration):
    """Latest timestamp per (bin, polarity, pixel), mapped linearly to focal distance."""
    latest = np.full((num_bins, 2, height, width), -math.inf)
    if len(ts) == 0:
        return np.zeros_like(latest)
    t0, t1 = min(ts), max(ts)
    span = t1 - t0
    for x, y, t, p in zip(xs, ys, ts, ps):
        if span == 0:
            b = 0
        else:
            b = min(int((t - t0) / span * num_bins), num_bins - 1)
            # exact edge placement: bins are [edge_b, edge_{b+1})
            edges = [t0 + span * i / num_bins for i in range(num_bins + 1)]
            while b + 1 < num_bins and t >= edges[b + 1]:
                b += 1
            while b > 0 and t < edges[b]:
                b -= 1
        ch = 0 if p > 0 else 1
        latest[b, ch, y, x] = max(latest[b, ch, y, x], t)
    out = np.zeros_like(latest)
    hit = np.isfinite(latest)
    out[hit] = d_start + (latest[hit] - t_start) / duration * (d_end - d_start)
    return out


def metrics_loop(pred, gt, mask):
    """(rmse, absrel, d1, d2, d3, n) by explicit iteration."""
    sq = rel = 0.0
    hits = [0, 0, 0]
    n = 0
    h, w = gt.shape
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or gt[i, j] <= 0:
                continue
            p, g = float(pred[i, j]), float(gt[i, j])
            n += 1
            sq += (p - g) ** 2
            rel += abs(p - g) / g
            ratio = max(p / g, g / p) if p > 0 else math.inf
            for k in range(3):
                if ratio < 1.25 ** (k + 1):
                    hits[k] += 1
    if n == 0:
        return None
    return math.sqrt(sq / n), rel / n, hits[0] / n, hits[1] / n, hits[2] / n, n


def _layer_norm_vec(x, gamma, beta, eps):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(x, gamma, beta)]


def _affine(weight, bias, x):
    # weight (out, in, 1, 1)
    return [sum(weight[o][i][0][0] * x[i] for i in range(len(x))) + bias[o] for o in range(len(bias))]


def attention_block_loop(p, f_v, f_d, eps=1e-6):
    """Stride-1 cross-modal attention block on (C, H, W) inputs by explicit iteration.

    ``p`` maps names (norm_v.gamma, q_proj.weight, ...) to nested lists or arrays.
    """
    c, h, w = len(f_v), len(f_v[0]), len(f_v[0][0])
    pix = [(i, j) for i in range(h) for j in range(w)]

    def at(f, i, j):
        return [f[ch][i][j] for ch in range(c)]

    def ln(name, x):
        return _layer_norm_vec(x, p[f"{name}.gamma"], p[f"{name}.beta"], eps)

    def lin(name, x):
        return _affine(p[f"{name}.weight"], p[f"{name}.bias"], x)

    q = [lin("q_proj", ln("norm_v", at(f_v, i, j))) for i, j in pix]
    nd = [ln("norm_d", at(f_d, i, j)) for i, j in pix]
    k = [lin("k_proj", x) for x in nd]
    v = [lin("v_proj", x) for x in nd]
    dim = len(q[0])
    out = [[[0.0] * w for _ in range(h)] for _ in range(c)]
    for qi, (i, j) in enumerate(pix):
        scores = [math.exp(sum(a * b for a, b in zip(k[kj], q[qi])) / math.sqrt(dim)) for kj in range(len(pix))]
        total = sum(scores)
        att = [sum(scores[kj] / total * v[kj][ch] for kj in range(len(pix))) for ch in range(c)]
        y = [f_v[ch][i][j] + att[ch] for ch in range(c)]
        hidden = [max(0.0, z) for z in lin("fc1", ln("norm_mlp", y))]
        mlp = lin("fc2", hidden)
        for ch in range(c):
            out[ch][i][j] = y[ch] + mlp[ch]
    return out

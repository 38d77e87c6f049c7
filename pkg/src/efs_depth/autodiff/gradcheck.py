"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _as_scalar(out: Tensor, rng: np.random.Generator) -> Tensor:
    if out.size == 1:
        return out.reshape(()) if out.ndim else out
    # fixed random projection turns a tensor output into a scalar
    proj = Tensor(rng.standard_normal(out.shape).astype(out.dtype))
    return (out * proj).sum()


def grad_check(fn, inputs, seed: int = 0, step: float = 1e-5, max_checks: int | None = None,
               zero_floor: float = 1e-6) -> float:
    """Largest relative gap between analytic and numerical gradients.

    ``fn(*inputs)`` must return a Tensor. For every input that requires grad,
    up to ``max_checks`` coordinates (all when None) are perturbed by
    ``+-step``. The per-input error is ``max|analytic - numeric|`` divided by
    the largest gradient magnitude seen for that input, floored at
    ``zero_floor`` times the largest magnitude over all inputs so that
    gradients which vanish identically are compared absolutely.
    """
    rng = np.random.default_rng(seed)
    proj_seed = int(rng.integers(2**31))

    def scalar_value():
        return float(_as_scalar(fn(*inputs), np.random.default_rng(proj_seed)).data)

    for x in inputs:
        x.grad = None
    _as_scalar(fn(*inputs), np.random.default_rng(proj_seed)).backward()

    pairs = []
    for x in inputs:
        if not x.requires_grad:
            continue
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            coords = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        numeric = np.empty(coords.size)
        for n, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            up = scalar_value()
            flat[i] = orig - step
            down = scalar_value()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
        pairs.append((analytic.reshape(-1)[coords], numeric))
    overall = max((max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for a, n in pairs), default=0.0)
    worst = 0.0
    for a, n in pairs:
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), zero_floor * overall, 1e-12)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0) / scale))
    for x in inputs:
        x.grad = None
    return worst

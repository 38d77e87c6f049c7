"""Differentiable primitives.

Each primitive computes its forward value with numpy and registers a closure
returning one gradient per parent. Broadcasting is limited to a scalar
(size-1 tensor or python number) against a tensor.
"""
from __future__ import annotations

import builtins
import contextlib

import numpy as np

from .tensor import ShapeError, Tensor, _faults, as_tensor


@contextlib.contextmanager
def inject_fault(name: str):
    """Deliberately corrupt the named primitive's backward pass (self-check hook)."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _coerce(a, b):
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and not b_t:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif b_t and not a_t:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not a_t and not b_t:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _unbroadcast(g, shape):
    # only scalar broadcasting is supported
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _check_broadcast(op, a, b):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad * bd, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or equally batched 3-D matrix product."""
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad @ bd, (a, b), backward, "matmul")


def _pad_hw(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, C, H, W) input with (O, C, kh, kw) weights."""
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv2d: input {xd.shape} incompatible with weight {wd.shape}")
    if bias is not None and bias.shape != (wd.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} incompatible with weight {wd.shape}")
    batch, _, h, w = xd.shape
    out_ch, in_ch, kh, kw = wd.shape
    xp = _pad_hw(xd, padding)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {wd.shape} larger than padded input {xp.shape}")
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = cols[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.tensordot(g, wd, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._result(out, parents, backward, "conv2d")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Normalize (B, C, ...) over the channel axis at every position."""
    xd = x.data
    c = xd.shape[1]
    if gamma is not None and gamma.shape != (c,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} incompatible with input {xd.shape}")
    if beta is not None and beta.shape != (c,):
        raise ShapeError(f"layer_norm: beta {beta.shape} incompatible with input {xd.shape}")
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    mu = xd.mean(axis=1, keepdims=True)
    centred = xd - mu
    var = (centred * centred).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    gd = gamma.data.reshape(bshape) if gamma is not None else None
    out = xhat * gd if gamma is not None else xhat
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, xd.ndim))

    def backward(g):
        dxhat = g * gd if gamma is not None else g
        gx = None
        if x.requires_grad:
            gx = inv * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=reduce_axes))
        if beta is not None:
            grads.append(g.sum(axis=reduce_axes))
        return tuple(grads)

    parents = (x,) + tuple(p for p in (gamma, beta) if p is not None)
    return Tensor._result(out, parents, backward, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), backward, "softmax")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0

    def backward(g):
        return (g * pos,)

    return Tensor._result(np.where(pos, xd, 0).astype(xd.dtype, copy=False), (x,), backward, "relu")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def slice(x: Tensor, index) -> Tensor:  # noqa: A001 - primitive name
    """Basic (non-fancy) indexing."""
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not (isinstance(item, (int, builtins.slice)) or item is Ellipsis):
            raise TypeError(f"slice supports ints, slices and Ellipsis, got {type(item).__name__}")
    xd = x.data
    out = xd[index]

    def backward(g):
        gx = np.zeros_like(xd)
        gx[index] += g
        return (gx,)

    return Tensor._result(np.array(out, copy=True), (x,), backward, "slice")


def reshape(x: Tensor, shape) -> Tensor:
    xd = x.data
    try:
        out = xd.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {xd.shape} to {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(xd.shape),)

    return Tensor._result(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    xd = x.data
    if axes is None:
        axes = tuple(reversed(range(xd.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._result(np.transpose(xd, axes), (x,), backward, "transpose")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    xd = x.data
    out = xd.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xd.shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=xd.dtype), (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    xd = x.data
    count = xd.size if axis is None else int(np.prod([xd.shape[a] for a in np.atleast_1d(axis)]))
    out = xd.mean(axis=axis)

    def backward(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xd.shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=xd.dtype), (x,), backward, "mean")


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """(B, C, H, W) -> (B, C*r*r, H/r, W/r); channel c*r*r + i*r + j holds offset (i, j)."""
    xd = x.data
    b, c, h, w = xd.shape
    r = factor
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {(h, w)} not divisible by {r}")
    out = xd.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h // r, w // r)

    def backward(g):
        return (g.reshape(b, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h, w),)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "pixel_unshuffle")


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Inverse of ``pixel_unshuffle``."""
    xd = x.data
    b, cr2, h, w = xd.shape
    r = factor
    if cr2 % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {cr2} not divisible by {r * r}")
    c = cr2 // (r * r)
    out = xd.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * r, w * r)

    def backward(g):
        return (g.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, cr2, h, w),)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "pixel_shuffle")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    xd = x.data
    b, c, h, w = xd.shape
    r = factor
    out = np.repeat(np.repeat(xd, r, axis=2), r, axis=3)

    def backward(g):
        return (g.reshape(b, c, h, r, w, r).sum(axis=(3, 5)),)

    return Tensor._result(out, (x,), backward, "upsample_nearest")


def l1(x: Tensor, axis=None) -> Tensor:
    """Sum of absolute values."""
    xd = x.data
    out = np.abs(xd).sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.sign(xd) * g,)

    return Tensor._result(np.asarray(out, dtype=xd.dtype), (x,), backward, "l1")


def l2(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm (not squared); gradient taken as 0 at the origin."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis))

    def backward(g):
        n = norm if axis is None else np.expand_dims(norm, axis)
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1)
        return (np.where(n > 0, xd / safe, 0) * gg,)

    return Tensor._result(np.asarray(norm, dtype=xd.dtype), (x,), backward, "l2")

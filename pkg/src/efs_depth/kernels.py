"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
versions take over. ``use_backend`` switches explicitly (tests, benchmarks).
"""
import logging

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None
    log.debug("compiled kernels unavailable, using numpy fallback")

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    previous = active_backend()
    _active = _BACKENDS[name]
    return previous


def render_gather(image, sigmas):
    return _active.render_gather(image, sigmas)


def simulate_pixels(log_frames, times, threshold):
    return _active.simulate_pixels(log_frames, times, threshold)


def voxel_accumulate(grid, scaled_t, x, y, channel):
    return _active.voxel_accumulate(grid, scaled_t, x, y, channel)

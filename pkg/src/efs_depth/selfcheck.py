"""Built-in consistency checks on micro fixtures: gradients, voxel mass, event simulation."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import reference
from .autodiff import Tensor, grad_check, ops
from .encodings import EncodingConfig, build_voxel_grid
from .events import EventSimConfig, EventStream, FocalSweep, simulate_events
from .optics import LensConfig, render_focal_sweep
from .scenes import plane_scene

GRAD_TOL = 1e-4
E2E_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def primitive_cases(seed: int = 0):
    """(name, fn, inputs) for every differentiable primitive, in float64."""
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    img = _t(rng, 2, 3, 5, 5)
    w = _t(rng, 4, 3, 3, 3)
    bias = _t(rng, 4)
    ln_x = _t(rng, 2, 4, 3, 3)
    gamma, beta = _t(rng, 4), _t(rng, 4)
    relu_x = Tensor(rng.standard_normal((3, 4)) + np.sign(rng.standard_normal((3, 4))) * 0.1, requires_grad=True)
    shuf = _t(rng, 1, 8, 2, 3)
    return [
        ("add", lambda x, y: ops.add(x, y), [a, b]),
        ("sub", lambda x, y: ops.sub(x, y), [a, b]),
        ("mul", lambda x, y: ops.mul(x, y), [a, b]),
        ("matmul", lambda x, y: ops.matmul(x, y), [_t(rng, 3, 4), _t(rng, 4, 2)]),
        ("matmul_batched", lambda x, y: ops.matmul(x, y), [_t(rng, 2, 3, 4), _t(rng, 2, 4, 2)]),
        ("conv2d", lambda x, k, c: ops.conv2d(x, k, c, stride=1, padding=1), [img, w, bias]),
        ("conv2d_stride2", lambda x, k, c: ops.conv2d(x, k, c, stride=2, padding=1), [img, w, bias]),
        ("layer_norm", lambda x, g, bb: ops.layer_norm(x, g, bb), [ln_x, gamma, beta]),
        ("softmax", lambda x: ops.softmax(x, axis=1), [_t(rng, 3, 4)]),
        ("relu", lambda x: ops.relu(x), [relu_x]),
        ("concat", lambda x, y: ops.concat([x, y], axis=1), [_t(rng, 1, 2, 3, 3), _t(rng, 1, 3, 3, 3)]),
        ("slice", lambda x: x[:, 1:3], [_t(rng, 2, 4)]),
        ("reshape", lambda x: x.reshape(3, 4), [_t(rng, 2, 6)]),
        ("transpose", lambda x: x.transpose(1, 0), [_t(rng, 2, 5)]),
        ("sum", lambda x: x.sum(axis=1), [_t(rng, 3, 4)]),
        ("mean", lambda x: x.mean(axis=0), [_t(rng, 3, 4)]),
        ("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), [_t(rng, 1, 2, 4, 6)]),
        ("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), [shuf]),
        ("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), [_t(rng, 1, 2, 3, 3)]),
        ("l1", lambda x: ops.l1(x), [relu_x]),
        ("l2", lambda x: ops.l2(x, axis=(1,)), [_t(rng, 3, 4)]),
    ]


def check_primitives(seed: int = 0) -> list[tuple[str, float]]:
    return [(name, grad_check(fn, inputs, seed=seed)) for name, fn, inputs in primitive_cases(seed)]


def end_to_end_case(seed: int = 0, size: int = 8, num_bins: int = 4, channels: int = 4):
    """Tiny float64 model plus fixed inputs; returns (loss_fn, params)."""
    from .model import EDFFModel, ModelConfig, edff_loss

    cfg = ModelConfig(num_bins=num_bins, base_channels=channels, attention_dim=4, num_levels=3,
                      rdb_growth=4, rdb_layers=2, depth_bias_init=3.0, seed=seed)
    model = EDFFModel(cfg).astype(np.float64)
    rng = np.random.default_rng(seed + 1)
    # make the zero-initialized output layers nonzero so every path carries gradient
    for p in model.parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    voxel = Tensor(rng.random((2, num_bins, 2, size, size)))
    surface = Tensor(rng.random((2, num_bins, 2, size, size)) * 9 + 1)
    gt = rng.random((2, 1, size, size)) * 8 + 1
    mask = (rng.random((2, 1, size, size)) < 0.6).astype(np.float64)
    params = model.parameters()

    def loss_fn(*_):
        pred, _ = model(voxel, surface)
        return edff_loss(pred, gt, mask)
    return loss_fn, params


def check_end_to_end(seed: int = 0, max_checks: int = 4) -> float:
    fn, params = end_to_end_case(seed)
    return grad_check(fn, params, seed=seed, max_checks=max_checks)


def event_fixture(size: int = 8, frames: int = 16, depth_m: float = 4.0, seed: int = 0,
                  pixel_pitch_m: float = 5e-6):
    # coarse pitch keeps the blur below its cap across most of a 16-frame sweep
    sweep = FocalSweep(1.0, 10.0, 1.0, frames)
    scene = plane_scene(depth_m, size, size, seed=seed)
    return render_focal_sweep(scene, LensConfig(pixel_pitch_m=pixel_pitch_m), sweep), sweep


def compare_with_scanner(frames, cfg: EventSimConfig, oversample: int = 100):
    """(polarity sequences identical, max timestamp gap in oracle steps, residual / c)."""
    stream = simulate_events(frames, cfg)
    times = np.array([f.timestamp_s for f in frames])
    logs = np.log(np.stack([f.values.reshape(-1) for f in frames]) + cfg.log_eps)
    oracle = reference.scan_events(logs, times, cfg.threshold_c, oversample)
    step = (times[1] - times[0]) / oversample
    width = frames[0].values.shape[1]
    same = True
    gap = 0.0
    fast = []
    for j, (ot, op) in enumerate(oracle):
        ft, fp = stream.pixel_events(j % width, j // width)
        fast.append((ft, fp))
        if not np.array_equal(fp, op):
            same = False
            continue
        if ft.size:
            gap = max(gap, float(np.max(np.abs(ft - ot))) / step)
    residual = reference.reconstruction_residual(logs, times, cfg.threshold_c, fast)
    return same, gap, residual / cfg.threshold_c, stream


def check_voxel_partition(seed: int = 0, trials: int = 20) -> float:
    """Largest |total voxel mass - event count| over random streams."""
    rng = np.random.default_rng(seed)
    sweep = FocalSweep()
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 200))
        t = np.sort(rng.random(n))
        x = rng.integers(0, 6, n)
        y = rng.integers(0, 5, n)
        p = np.where(rng.random(n) < 0.5, 1, -1)
        stream = EventStream(x, y, t, p, 6, 5, sweep)
        n_bins = int(rng.integers(2, 10))
        grid = build_voxel_grid(stream, EncodingConfig(n_bins, 5, 6)).values
        worst = max(worst, abs(grid.sum() - n))
    return worst


def run_selfcheck(log=print) -> list[CheckResult]:
    """Run every check; stop at the first failure."""
    results: list[CheckResult] = []

    def record(name, ok, detail, start):
        res = CheckResult(name, ok, detail, time.perf_counter() - start)
        results.append(res)
        if log is not None:
            log(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({res.seconds:.2f}s)")
        return ok

    for name, fn, inputs in primitive_cases():
        start = time.perf_counter()
        err = grad_check(fn, inputs)
        if not record(f"grad:{name}", err < GRAD_TOL, f"relative error {err:.2e}", start):
            return results

    start = time.perf_counter()
    err = check_end_to_end()
    if not record("grad:end_to_end", err < E2E_TOL, f"relative error {err:.2e}", start):
        return results

    start = time.perf_counter()
    worst = check_voxel_partition()
    if not record("voxel:partition_of_unity", worst < 1e-9, f"max mass error {worst:.1e}", start):
        return results

    start = time.perf_counter()
    frames, _ = event_fixture()
    same, gap, resid, stream = compare_with_scanner(frames, EventSimConfig())
    ok = same and gap <= 1.0 and resid < 1.0 and stream.count > 0
    record("events:scanner_oracle", ok,
           f"{stream.count} events, polarity match {same}, max gap {gap:.3f} steps, residual {resid:.3f} c", start)
    return results


def first_failure(results: list[CheckResult]) -> CheckResult | None:
    return next((r for r in results if not r.ok), None)

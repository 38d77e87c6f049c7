"""Training loop, inference on event streams, checkpoints and loss traces."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor
from .classical import SparseDepth
from .encodings import EncodingConfig, build_mask, encode
from .events import EventStream
from .flatconfig import dump_flat, parse_bool, parse_flat
from .model import EDFFModel, LossConfig, ModelConfig, edff_loss
from .pipeline import Sample
from .tensorio import read_ten1, write_ten1

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message, iteration, last_finite_loss):
        super().__init__(message)
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    max_iterations: int | None = None
    sgdr: bool = False  # warm restarts are reserved, not implemented

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sgdr:
            raise NotImplementedError("warm-restart schedules are not implemented; use a constant learning rate")


@dataclass
class TraceRow:
    iteration: int
    epoch: int
    loss: float
    masked_rmse: float
    val_rmse: float = math.nan


@dataclass
class TrainResult:
    trace: list[TraceRow]
    initial_rmse: float
    final_rmse: float
    iterations: int


def stack_batch(samples: list[Sample]):
    voxel = np.stack([s.voxel for s in samples]).astype(np.float32)
    surface = np.stack([s.surface for s in samples]).astype(np.float32)
    mask = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    gt = np.stack([s.depth_gt for s in samples])[:, None].astype(np.float32)
    return voxel, surface, mask, gt


def masked_rmse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    m = mask > 0
    n = int(m.sum())
    if n == 0:
        return math.nan
    err = (pred.astype(np.float64) - gt)[m]
    return float(np.sqrt(np.mean(err * err)))


def dataset_rmse(model: EDFFModel, samples: list[Sample], batch_size: int = 4) -> float:
    """Pixel-weighted masked RMSE of the model over ``samples``."""
    sq, n = 0.0, 0
    for i in range(0, len(samples), batch_size):
        voxel, surface, mask, gt = stack_batch(samples[i:i + batch_size])
        pred, _ = model(voxel, surface)
        m = mask > 0
        err = (pred.data.astype(np.float64) - gt)[m]
        sq += float(np.sum(err * err))
        n += int(m.sum())
    return math.sqrt(sq / n) if n else math.nan


def train(model: EDFFModel, samples: list[Sample], epochs: int, cfg: TrainConfig = TrainConfig(),
          val_samples: list[Sample] | None = None, progress=None) -> TrainResult:
    """Adam on the masked depth loss; one trace row per iteration.

    Validation RMSE is filled in on the last iteration of each epoch.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    h, w = samples[0].mask.shape
    for s in samples:
        if s.mask.shape != (h, w):
            raise ValueError(f"sample {s.sample_id} has size {s.mask.shape}, expected {(h, w)}")
    model.sensor_size = None
    model.check_input(h, w)
    model.sensor_size = (h, w)

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    initial = dataset_rmse(model, samples, cfg.batch_size)
    trace: list[TraceRow] = []
    iteration = 0
    last_finite = math.nan
    per_epoch = math.ceil(len(samples) / cfg.batch_size)
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for b in range(per_epoch):
            if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
                break
            batch = [samples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            voxel, surface, mask, gt = stack_batch(batch)
            opt.zero_grad()
            pred, _ = model(voxel, surface)
            loss = edff_loss(pred, gt, mask, cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at iteration {iteration} (last finite loss {last_finite:.6g})",
                    iteration, last_finite,
                )
            last_finite = value
            loss.backward()
            opt.step()
            row = TraceRow(iteration, epoch, value, masked_rmse(pred.data, gt, mask))
            if b == per_epoch - 1 and val_samples:
                row.val_rmse = dataset_rmse(model, val_samples, cfg.batch_size)
            trace.append(row)
            if progress is not None:
                progress(row)
            iteration += 1
        if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
            break
    final = dataset_rmse(model, samples, cfg.batch_size)
    return TrainResult(trace, initial, final, iteration)


def predict(stream: EventStream, model: EDFFModel, enc: EncodingConfig | None = None) -> SparseDepth:
    """Sparse depth for one stream: model output on pixels with events, clipped to the sweep range."""
    if enc is None:
        enc = EncodingConfig(model.cfg.num_bins, stream.height, stream.width)
    if enc.num_bins != model.cfg.num_bins:
        raise ValueError(f"encoding has {enc.num_bins} bins, model expects {model.cfg.num_bins}")
    if model.sensor_size is not None and (stream.height, stream.width) != tuple(model.sensor_size):
        from .autodiff import ShapeError
        raise ShapeError(
            f"stream is {stream.height}x{stream.width}, model was trained on "
            f"{model.sensor_size[0]}x{model.sensor_size[1]}"
        )
    mask = build_mask(stream, enc)
    if stream.count == 0:
        return SparseDepth.empty(stream.height, stream.width)
    voxel, surface, _ = encode(stream, enc)
    pred, _ = model(voxel.values, surface.values)
    lo, hi = sorted((stream.sweep.d_f_start_m, stream.sweep.d_f_end_m))
    depth = np.clip(pred.data[0, 0].astype(np.float64), lo, hi)
    return SparseDepth.from_dense(depth, mask)


def predict_sample(sample: Sample, model: EDFFModel, sweep) -> SparseDepth:
    """Same as ``predict`` but from precomputed encodings."""
    pred, _ = model(sample.voxel, sample.surface)
    lo, hi = sorted((sweep.d_f_start_m, sweep.d_f_end_m))
    depth = np.clip(pred.data[0, 0].astype(np.float64), lo, hi)
    return SparseDepth.from_dense(depth, sample.mask)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MANIFEST = "checkpoint.txt"
_CKPT_FORMAT = "EFS-CHECKPOINT-1"


def model_config_items(cfg: ModelConfig):
    return [(f"model.{f.name}", getattr(cfg, f.name)) for f in fields(cfg)]


def model_config_from_flat(kv: dict[str, str]) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"model.{f.name}"
        if key not in kv:
            continue
        raw = kv[key]
        default = getattr(ModelConfig(), f.name)
        if isinstance(default, bool):
            kwargs[f.name] = parse_bool(raw)
        elif isinstance(default, int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return ModelConfig(**kwargs)


def save_checkpoint(model: EDFFModel, out_dir) -> Path:
    """Directory with one TEN1 blob per parameter and a flat-text manifest, written atomically."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        items = [("format", _CKPT_FORMAT)] + model_config_items(model.cfg)
        if model.sensor_size is not None:
            items.append(("sensor.height", model.sensor_size[0]))
            items.append(("sensor.width", model.sensor_size[1]))
        params = list(model.named_parameters())
        items.append(("params", len(params)))
        for i, (name, p) in enumerate(params):
            fname = f"p{i:04d}.ten1"
            write_ten1(work / fname, p.data)
            items.append((f"param.{i}.name", name))
            items.append((f"param.{i}.shape", "x".join(str(d) for d in p.shape) or "scalar"))
            items.append((f"param.{i}.file", fname))
        (work / CHECKPOINT_MANIFEST).write_text(dump_flat(items, header="model checkpoint"))
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(work, out_dir)
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    return out_dir


def load_checkpoint(path) -> EDFFModel:
    path = Path(path)
    manifest = path / CHECKPOINT_MANIFEST if path.is_dir() else path
    kv = parse_flat(manifest.read_text(), str(manifest))
    if kv.get("format") != _CKPT_FORMAT:
        raise ValueError(f"{manifest}: not a checkpoint")
    model = EDFFModel(model_config_from_flat(kv))
    state = {}
    for i in range(int(kv["params"])):
        name = kv[f"param.{i}.name"]
        value = read_ten1(manifest.parent / kv[f"param.{i}.file"])
        shape_txt = kv[f"param.{i}.shape"]
        shape = () if shape_txt == "scalar" else tuple(int(d) for d in shape_txt.split("x"))
        if value.shape != shape:
            raise ValueError(f"{name}: blob shape {value.shape} differs from recorded {shape}")
        state[name] = value
    model.load_state_dict(state)
    if "sensor.height" in kv:
        model.sensor_size = (int(kv["sensor.height"]), int(kv["sensor.width"]))
    return model


def trace_to_csv(trace: list[TraceRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "epoch", "loss", "masked_rmse", "val_rmse"])
    for r in trace:
        writer.writerow([r.iteration, r.epoch, repr(r.loss), repr(r.masked_rmse),
                         "" if math.isnan(r.val_rmse) else repr(r.val_rmse)])
    return buf.getvalue()


def write_trace(path, trace: list[TraceRow]) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(trace_to_csv(trace))
    os.replace(tmp, path)
    return path

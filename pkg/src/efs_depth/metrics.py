"""Masked depth metrics, dataset evaluation and the module ablation harness."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .classical import ReversalConfig, SparseDepth, estimate_sparse_depth
from .encodings import BinaryMask
from .model import EDFFModel, ModelConfig
from .pipeline import DatasetManifest, SampleRecord

log = logging.getLogger(__name__)


class EmptyMaskError(ValueError):
    """No pixel is both masked in and has positive ground truth."""


@dataclass(frozen=True)
class Metrics:
    rmse_m: float
    absrel: float
    delta1: float
    delta2: float
    delta3: float
    pixel_count: int


@dataclass(frozen=True)
class _Sums:
    """Additive per-pixel sums; aggregation over samples is pixel-weighted."""

    sq: float
    rel: float
    d1: int
    d2: int
    d3: int
    n: int

    def __add__(self, other):
        return _Sums(self.sq + other.sq, self.rel + other.rel, self.d1 + other.d1,
                     self.d2 + other.d2, self.d3 + other.d3, self.n + other.n)

    def metrics(self) -> Metrics:
        if self.n == 0:
            raise EmptyMaskError("no valid pixels to evaluate")
        n = self.n
        return Metrics(math.sqrt(self.sq / n), self.rel / n, self.d1 / n, self.d2 / n, self.d3 / n, n)


def _values(x):
    if isinstance(x, SparseDepth):
        return x.depth_map
    if isinstance(x, BinaryMask):
        return x.values
    return np.asarray(x)


def _sums(pred, gt, mask) -> _Sums:
    p = np.asarray(_values(pred), dtype=np.float64)
    g = np.asarray(_values(gt), dtype=np.float64)
    m = np.asarray(_values(mask)) > 0
    if not p.shape == g.shape == m.shape:
        raise ValueError(f"shape mismatch: pred {p.shape}, gt {g.shape}, mask {m.shape}")
    valid = m & (g > 0)
    p, g = p[valid], g[valid]
    err = p - g
    # tiny positive depths may overflow the ratios to inf, which is the right answer
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(p > 0, np.maximum(p / g, g / p), np.inf)
        return _Sums(
            float(np.sum(err * err)),
            float(np.sum(np.abs(err) / g)),
            int(np.sum(ratio < 1.25)),
            int(np.sum(ratio < 1.25 ** 2)),
            int(np.sum(ratio < 1.25 ** 3)),
            int(valid.sum()),
        )


def compute_metrics(pred, gt, mask) -> Metrics:
    """RMSE, AbsRel and delta accuracies over pixels with mask set and gt > 0.

    Nonpositive predictions count as failing every delta threshold.
    """
    s = _sums(pred, gt, mask)
    if s.n == 0:
        raise EmptyMaskError("mask and positive ground truth do not overlap")
    return s.metrics()


# -- estimators ---------------------------------------------------------------

Estimator = Callable[[DatasetManifest, SampleRecord], SparseDepth]


def classical_estimator(cfg: ReversalConfig = ReversalConfig()) -> Estimator:
    def run(manifest, record):
        return estimate_sparse_depth(manifest.load_stream(record), cfg)
    run.name = "classical"
    return run


def model_estimator(model: EDFFModel) -> Estimator:
    from .training import predict_sample

    def run(manifest, record):
        return predict_sample(manifest.load_sample(record), model, manifest.sweep)
    run.name = "edff"
    return run


def ground_truth_estimator() -> Estimator:
    def run(manifest, record):
        sample = manifest.load_sample(record)
        return SparseDepth.from_dense(sample.depth_gt, sample.mask)
    run.name = "ground_truth"
    return run


@dataclass
class Evaluation:
    aggregate: Metrics
    per_sample: list[tuple[str, Metrics | None]]

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "rmse_m", "absrel", "delta1", "delta2", "delta3", "pixels"])
        for sid, m in self.per_sample:
            w.writerow([sid] + (["", "", "", "", "", 0] if m is None else _metric_cells(m)))
        w.writerow(["all (pixel-weighted)"] + _metric_cells(self.aggregate))
        return buf.getvalue()


def _metric_cells(m: Metrics):
    return [f"{m.rmse_m:.6f}", f"{m.absrel:.6f}", f"{m.delta1:.6f}", f"{m.delta2:.6f}",
            f"{m.delta3:.6f}", m.pixel_count]


def evaluate(manifest: DatasetManifest, estimator: Estimator) -> Evaluation:
    """Evaluate on mask(estimate) AND mask(sample); aggregate is pixel-weighted across samples."""
    from .pipeline import DatasetError

    total = _Sums(0.0, 0.0, 0, 0, 0, 0)
    rows = []
    for record in manifest.records:
        try:
            sample = manifest.load_sample(record)
            pred = estimator(manifest, record)
        except (OSError, ValueError, DatasetError) as exc:
            raise DatasetError(f"sample {record.sample_id}: {exc}") from exc
        mask = (sample.mask > 0) & (pred.mask.values > 0)
        s = _sums(pred.depth_map, sample.depth_gt, mask)
        total = total + s
        rows.append((record.sample_id, s.metrics() if s.n else None))
    if total.n == 0:
        raise EmptyMaskError("no evaluable pixels in the whole manifest")
    return Evaluation(total.metrics(), rows)


# -- ablation -----------------------------------------------------------------

ABLATION_ROWS = (
    ("baseline", False, False),
    ("fdcm", True, False),
    ("mdfb", False, True),
    ("fdcm+mdfb", True, True),
)


@dataclass
class AblationRow:
    name: str
    use_fdcm: bool
    use_mdfb: bool
    seed: int
    metrics: Metrics | None
    error: str = ""


@dataclass
class AblationReport:
    rows: list[AblationRow]

    def mean_rmse(self, name: str) -> float:
        vals = [r.metrics.rmse_m for r in self.rows if r.name == name and r.metrics is not None]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> list[tuple[str, bool, bool, float, float, float, int]]:
        out = []
        for name, fdcm, mdfb in ABLATION_ROWS:
            ok = [r.metrics for r in self.rows if r.name == name and r.metrics is not None]
            if ok:
                out.append((name, fdcm, mdfb, float(np.mean([m.rmse_m for m in ok])),
                            float(np.mean([m.absrel for m in ok])), float(np.mean([m.delta1 for m in ok])), len(ok)))
            else:
                out.append((name, fdcm, mdfb, math.nan, math.nan, math.nan, 0))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# validation metrics, pixel-weighted over samples; mean over seeds in summary rows\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "fdcm", "mdfb", "seed", "rmse_m", "absrel", "delta1", "status"])
        for r in self.rows:
            if r.metrics is None:
                w.writerow([r.name, int(r.use_fdcm), int(r.use_mdfb), r.seed, "", "", "", f"failed: {r.error}"])
            else:
                m = r.metrics
                w.writerow([r.name, int(r.use_fdcm), int(r.use_mdfb), r.seed,
                            f"{m.rmse_m:.6f}", f"{m.absrel:.6f}", f"{m.delta1:.6f}", "ok"])
        for name, fdcm, mdfb, rmse, absrel, d1, n in self.summary():
            w.writerow([name, int(fdcm), int(mdfb), "mean", f"{rmse:.6f}", f"{absrel:.6f}", f"{d1:.6f}",
                        f"{n} seeds"])
        return buf.getvalue()

    @property
    def failed(self) -> bool:
        return any(r.metrics is None for r in self.rows)


def ablation_run(train_manifest: DatasetManifest, val_manifest: DatasetManifest, base: ModelConfig,
                 epochs: int, train_cfg=None, seeds=(0, 1, 2), progress=None) -> AblationReport:
    """Train and validate every FDCM/MDFB flag combination for each seed.

    A row whose training diverges is recorded as failed; the others still run.
    """
    from .training import DivergenceError, TrainConfig, train

    train_cfg = train_cfg or TrainConfig()
    train_samples = train_manifest.load_samples()
    rows = []
    for seed in seeds:
        for name, fdcm, mdfb in ABLATION_ROWS:
            cfg = replace(base, use_fdcm=fdcm, use_mdfb=mdfb, seed=seed)
            model = EDFFModel(cfg)
            try:
                train(model, train_samples, epochs, replace(train_cfg, seed=seed))
                metrics = evaluate(val_manifest, model_estimator(model)).aggregate
                row = AblationRow(name, fdcm, mdfb, seed, metrics)
            except (DivergenceError, EmptyMaskError, FloatingPointError) as exc:
                row = AblationRow(name, fdcm, mdfb, seed, None, str(exc))
            rows.append(row)
            if progress is not None:
                progress(row)
    return AblationReport(rows)


def write_report(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path

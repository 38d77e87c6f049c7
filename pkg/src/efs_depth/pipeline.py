"""Dataset assembly: render, simulate, encode and persist synthetic event focal stacks."""
from __future__ import annotations

import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classical import SparseDepth
from .encodings import EncodingConfig, encode
from .events import EventSimConfig, EventStream, FocalSweep, inject_noise, read_efs1, simulate_events, write_efs1
from .flatconfig import dump_flat, parse_flat, parse_optional_float
from .optics import LensConfig, Scene, render_focal_sweep
from .scenes import SceneConfig, generate_scene
from .tensorio import read_ten1, write_ten1

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
MANIFEST_FORMAT = "EFS-MANIFEST-1"
SAMPLE_FILES = ("events", "voxel", "surface", "mask", "depth_gt")
_FILE_NAMES = {
    "events": "events.efs1",
    "voxel": "voxel.ten1",
    "surface": "surface.ten1",
    "mask": "mask.ten1",
    "depth_gt": "depth_gt.ten1",
}


class DatasetError(RuntimeError):
    pass


@dataclass
class Sample:
    """In-memory network inputs and target for one scene."""

    sample_id: str
    voxel: np.ndarray      # (N, 2, H, W)
    surface: np.ndarray    # (N, 2, H, W)
    mask: np.ndarray       # (H, W)
    depth_gt: np.ndarray   # (H, W), dense

    @property
    def target(self) -> SparseDepth:
        return SparseDepth.from_dense(self.depth_gt, self.mask)


@dataclass
class SampleRecord:
    sample_id: str
    paths: dict[str, str]  # relative to the manifest directory
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    root: Path
    sweep: FocalSweep
    lens: LensConfig
    encoding: EncodingConfig
    sim: EventSimConfig
    records: list[SampleRecord] = field(default_factory=list)

    def path_of(self, record: SampleRecord, kind: str) -> Path:
        return self.root / record.paths[kind]

    def __len__(self):
        return len(self.records)

    def to_text(self) -> str:
        items = [("format", MANIFEST_FORMAT)]
        items += [(f"sweep.{k}", getattr(self.sweep, k)) for k in
                  ("d_f_start_m", "d_f_end_m", "duration_s", "num_samples", "t_start_s")]
        items += [(f"lens.{k}", getattr(self.lens, k)) for k in
                  ("focal_length_m", "f_number", "pixel_pitch_m", "k_sigma", "max_sigma_px")]
        items += [(f"encoding.{k}", getattr(self.encoding, k)) for k in ("num_bins", "height", "width")]
        items += [(f"sim.{k}", getattr(self.sim, k)) for k in
                  ("threshold_c", "log_eps", "noise_rate_hz_per_px", "seed")]
        items.append(("samples", len(self.records)))
        for i, rec in enumerate(self.records):
            items.append((f"sample.{i}.id", rec.sample_id))
            items.append((f"sample.{i}.split", rec.split))
            items += [(f"sample.{i}.{kind}", rec.paths[kind]) for kind in SAMPLE_FILES]
        return dump_flat(items, header="event focal stack dataset manifest")

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_text())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        kv = parse_flat(path.read_text(), str(path))
        if kv.get("format") != MANIFEST_FORMAT:
            raise DatasetError(f"{path}: not a dataset manifest")
        try:
            sweep = FocalSweep(
                float(kv["sweep.d_f_start_m"]), float(kv["sweep.d_f_end_m"]), float(kv["sweep.duration_s"]),
                int(kv["sweep.num_samples"]), float(kv["sweep.t_start_s"]),
            )
            lens = LensConfig(
                float(kv["lens.focal_length_m"]), float(kv["lens.f_number"]), float(kv["lens.pixel_pitch_m"]),
                float(kv["lens.k_sigma"]), parse_optional_float(kv["lens.max_sigma_px"]),
            )
            encoding = EncodingConfig(int(kv["encoding.num_bins"]), int(kv["encoding.height"]), int(kv["encoding.width"]))
            sim = EventSimConfig(
                float(kv["sim.threshold_c"]), float(kv["sim.log_eps"]),
                float(kv["sim.noise_rate_hz_per_px"]), int(kv["sim.seed"]),
            )
            records = []
            for i in range(int(kv["samples"])):
                paths = {kind: kv[f"sample.{i}.{kind}"] for kind in SAMPLE_FILES}
                records.append(SampleRecord(kv[f"sample.{i}.id"], paths, kv[f"sample.{i}.split"]))
        except KeyError as exc:
            raise DatasetError(f"{path}: missing key {exc.args[0]}") from exc
        return cls(path.parent, sweep, lens, encoding, sim, records)

    def subset(self, split: str) -> "DatasetManifest":
        return replace(self, records=[r for r in self.records if r.split == split])

    def load_stream(self, record: SampleRecord) -> EventStream:
        return read_efs1(self.path_of(record, "events"), num_samples=self.sweep.num_samples)

    def load_sample(self, record: SampleRecord) -> Sample:
        try:
            return Sample(
                record.sample_id,
                read_ten1(self.path_of(record, "voxel")),
                read_ten1(self.path_of(record, "surface")),
                read_ten1(self.path_of(record, "mask")),
                read_ten1(self.path_of(record, "depth_gt")),
            )
        except (OSError, ValueError) as exc:
            raise DatasetError(f"sample {record.sample_id}: {exc}") from exc

    def load_samples(self) -> list[Sample]:
        return [self.load_sample(r) for r in self.records]


def simulate_scene(scene: Scene, lens: LensConfig, sweep: FocalSweep, sim: EventSimConfig) -> EventStream:
    frames = render_focal_sweep(scene, lens, sweep)
    stream = simulate_events(frames, sim, sweep)
    return inject_noise(stream, sim)


def make_sample(sample_id: str, scene: Scene, stream: EventStream, enc: EncodingConfig) -> Sample:
    voxel, surface, mask = encode(stream, enc)
    return Sample(sample_id, voxel.values, surface.values, mask.values, scene.depth_map)


def synthesize(scene_cfg: SceneConfig, lens: LensConfig, sweep: FocalSweep, sim: EventSimConfig,
               enc: EncodingConfig, sample_id: str | None = None):
    """Scene config -> (scene, stream, sample), all in memory."""
    scene_cfg.check_sweep(sweep)
    scene = generate_scene(scene_cfg)
    # per-scene noise seed so scenes do not share noise patterns
    stream = simulate_scene(scene, lens, sweep, replace(sim, seed=sim.seed + scene_cfg.seed))
    sample = make_sample(sample_id or f"scene_{scene_cfg.seed}", scene, stream, enc)
    return scene, stream, sample


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("EFS_DEPTH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_scene(workdir: Path, index: int, scene_cfg, lens, sweep, sim, enc) -> SampleRecord:
    sample_id = f"scene_{index:04d}"
    _, stream, sample = synthesize(scene_cfg, lens, sweep, sim, enc, sample_id)
    sub = workdir / sample_id
    sub.mkdir()
    write_efs1(sub / _FILE_NAMES["events"], stream)
    write_ten1(sub / _FILE_NAMES["voxel"], sample.voxel)
    write_ten1(sub / _FILE_NAMES["surface"], sample.surface)
    write_ten1(sub / _FILE_NAMES["mask"], sample.mask)
    write_ten1(sub / _FILE_NAMES["depth_gt"], sample.depth_gt)
    log.info("%s: %d events, %d masked pixels", sample_id, stream.count, int(sample.mask.sum()))
    return SampleRecord(sample_id, {k: f"{sample_id}/{_FILE_NAMES[k]}" for k in SAMPLE_FILES})


def build_dataset(scene_cfgs, lens: LensConfig, sweep: FocalSweep, sim: EventSimConfig,
                  enc: EncodingConfig, out_dir, *, force: bool = False,
                  threads: int | None = None) -> DatasetManifest:
    """Render, simulate, encode and write every scene; the manifest is written last.

    Work happens in a sibling temporary directory that replaces ``out_dir``
    only after every file and the manifest exist, so a failed build leaves
    nothing behind.
    """
    scene_cfgs = list(scene_cfgs)
    out_dir = Path(out_dir)
    for cfg in scene_cfgs:
        if (cfg.height, cfg.width) != (enc.height, enc.width):
            raise ValueError(f"scene size {cfg.height}x{cfg.width} differs from encoding {enc.height}x{enc.width}")
        cfg.check_sweep(sweep)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} already exists and is not empty (use force to overwrite)")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    workdir = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        with ThreadPoolExecutor(max_workers=_thread_count(threads)) as pool:
            futures = [
                pool.submit(_write_scene, workdir, i, cfg, lens, sweep, sim, enc)
                for i, cfg in enumerate(scene_cfgs)
            ]
            records = [f.result() for f in futures]
        manifest = DatasetManifest(workdir, sweep, lens, enc, sim, records)
        manifest.save()
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(workdir, out_dir)
    except BaseException:
        shutil.rmtree(workdir, ignore_errors=True)
        raise
    manifest.root = out_dir
    return manifest


def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int = 0):
    """Deterministic shuffle split into (train, val) manifests."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(manifest.records)
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n_train >= n:
        raise DatasetError(f"cannot split {n} samples with fraction {train_fraction}")
    order = np.random.default_rng(seed).permutation(n)
    train_idx = set(order[:n_train].tolist())
    train, val = [], []
    for i, rec in enumerate(manifest.records):
        if i in train_idx:
            train.append(replace(rec, split="train"))
        else:
            val.append(replace(rec, split="val"))
    return replace(manifest, records=train), replace(manifest, records=val)


def scene_configs(base: SceneConfig, count: int) -> list[SceneConfig]:
    """``count`` scene configs differing only in seed (base.seed, base.seed + 1, ...)."""
    return [replace(base, seed=base.seed + i) for i in range(count)]

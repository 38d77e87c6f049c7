"""Run configuration: one flat ``key = value`` file covering every stage."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .encodings import EncodingConfig
from .events import EventSimConfig, FocalSweep
from .flatconfig import FlatConfigError, dump_flat, parse_bool, parse_flat, parse_optional_float
from .model import LossConfig, ModelConfig
from .optics import LensConfig
from .scenes import SceneConfig, TextureConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    unit: str
    help: str


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_F, _I, _B = float, int, parse_bool

KEYS: dict[str, Key] = {
    "lens.focal_length_m": Key(_F, 0.05, "m", "lens focal length"),
    "lens.f_number": Key(_F, 8.0, "-", "aperture f-number"),
    "lens.pixel_pitch_m": Key(_F, 3e-7, "m", "sensor pixel pitch"),
    "lens.k_sigma": Key(_F, 0.5, "-", "Gaussian sigma per blur-circle diameter"),
    "lens.max_sigma_px": Key(parse_optional_float, 6.0, "px", "cap on blur sigma (none = uncapped)"),
    "sweep.d_f_start_m": Key(_F, 1.0, "m", "focal distance at sweep start"),
    "sweep.d_f_end_m": Key(_F, 10.0, "m", "focal distance at sweep end"),
    "sweep.duration_s": Key(_F, 1.0, "s", "sweep duration"),
    "sweep.num_samples": Key(_I, 64, "frames", "rendered frames per sweep"),
    "sweep.t_start_s": Key(_F, 0.0, "s", "sweep start time"),
    "sim.threshold_c": Key(_F, 0.15, "log units", "contrast threshold"),
    "sim.log_eps": Key(_F, 1e-3, "intensity", "offset inside the log"),
    "sim.noise_rate_hz_per_px": Key(_F, 0.0, "Hz/px", "uniform background noise rate"),
    "sim.seed": Key(_I, 0, "-", "noise seed"),
    "encoding.num_bins": Key(_I, 8, "bins", "temporal bins of both encodings"),
    "scene.count": Key(_I, 8, "scenes", "scenes in a generated dataset"),
    "scene.num_objects": Key(_I, 4, "objects", "rectangles in front of the wall"),
    "scene.depth_min_m": Key(_F, 1.5, "m", "nearest object depth"),
    "scene.depth_max_m": Key(_F, 8.0, "m", "farthest object depth"),
    "scene.wall_depth_m": Key(_F, 9.0, "m", "background wall depth"),
    "scene.texture_sigma_px": Key(_F, 0.8, "px", "texture smoothing sigma"),
    "scene.texture_contrast": Key(_F, 0.8, "intensity", "texture peak-to-peak contrast"),
    "scene.texture_mean": Key(_F, 0.5, "intensity", "texture mean intensity"),
    "scene.height": Key(_I, 64, "px", "sensor height"),
    "scene.width": Key(_I, 64, "px", "sensor width"),
    "scene.seed": Key(_I, 0, "-", "seed of the first scene; later scenes use seed+1, seed+2, ..."),
    "model.base_channels": Key(_I, 16, "channels", "feature width at full resolution"),
    "model.num_levels": Key(_I, 3, "levels", "UNet scales (initial depth outputs)"),
    "model.attention_dim": Key(_I, 16, "channels", "query/key width of the attention block"),
    "model.attention_stride": Key(_I, 2, "px", "downsampling of the attention token grid"),
    "model.rdb_layers": Key(_I, 3, "layers", "convolutions per residual dense block"),
    "model.rdb_growth": Key(_I, 8, "channels", "growth rate of the dense block"),
    "model.use_fdcm": Key(_B, True, "-", "attention fusion (off = convolutional fusion)"),
    "model.use_mdfb": Key(_B, True, "-", "multi-level fusion (off = convolutional refinement)"),
    "model.depth_bias_init": Key(_F, 0.0, "m", "initial bias of the depth heads"),
    "model.seed": Key(_I, 0, "-", "weight initialization seed"),
    "loss.alpha": Key(_F, 128.0, "-", "weight of the masked depth term"),
    "loss.beta": Key(_F, 1.0, "-", "weight of the masked gradient term"),
    "train.lr": Key(_F, 5e-4, "-", "Adam learning rate"),
    "train.batch_size": Key(_I, 4, "samples", "minibatch size"),
    "train.epochs": Key(_I, 125, "epochs", "passes over the training split"),
    "train.max_iterations": Key(lambda s: None if s.strip().lower() == "none" else int(s), None,
                                "iterations", "stop after this many updates (none = no cap)"),
    "train.seed": Key(_I, 0, "-", "shuffle seed"),
    "train.val_fraction": Key(_F, 0.25, "-", "fraction of samples held out for validation (0 = none)"),
    "train.split_seed": Key(_I, 0, "-", "train/validation split seed"),
    "ablation.seeds": Key(_ints, (0, 1, 2), "-", "seeds of the ablation runs"),
}


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: spec.default for k, spec in KEYS.items()}
        for k, v in (values or {}).items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = v
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        try:
            raw = parse_flat(text, source)
        except FlatConfigError as exc:
            raise ConfigError(str(exc)) from exc
        values = {}
        for key, text_value in raw.items():
            if key not in KEYS:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            try:
                values[key] = KEYS[key].parse(text_value)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    def to_text(self) -> str:
        return dump_flat(self.values.items(), header="run configuration")

    def _section(self, prefix: str, build):
        try:
            return build()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid {prefix}.* settings: {exc}") from exc

    def validate(self):
        self.lens(), self.sweep(), self.sim(), self.encoding(), self.model(), self.loss()
        scene = self.scene_config()
        self._section("scene", lambda: scene.check_sweep(self.sweep()))
        if self["scene.count"] < 1:
            raise ConfigError("invalid scene.* settings: scene.count must be >= 1")
        if not 0 <= self["train.val_fraction"] < 1:
            raise ConfigError("invalid train.* settings: train.val_fraction must be in [0, 1)")
        self.train()
        m = self.model().size_multiple
        if self["scene.height"] % m or self["scene.width"] % m:
            raise ConfigError(f"invalid scene.* settings: height and width must be divisible by {m}")

    def lens(self) -> LensConfig:
        v = self.values
        return self._section("lens", lambda: LensConfig(
            v["lens.focal_length_m"], v["lens.f_number"], v["lens.pixel_pitch_m"], v["lens.k_sigma"],
            v["lens.max_sigma_px"]))

    def sweep(self) -> FocalSweep:
        v = self.values
        return self._section("sweep", lambda: FocalSweep(
            v["sweep.d_f_start_m"], v["sweep.d_f_end_m"], v["sweep.duration_s"], v["sweep.num_samples"],
            v["sweep.t_start_s"]))

    def sim(self) -> EventSimConfig:
        v = self.values
        return self._section("sim", lambda: EventSimConfig(
            v["sim.threshold_c"], v["sim.log_eps"], v["sim.noise_rate_hz_per_px"], v["sim.seed"]))

    def encoding(self) -> EncodingConfig:
        v = self.values
        return self._section("encoding", lambda: EncodingConfig(
            v["encoding.num_bins"], v["scene.height"], v["scene.width"]))

    def scene_config(self) -> SceneConfig:
        v = self.values
        return self._section("scene", lambda: SceneConfig(
            num_objects=v["scene.num_objects"],
            depth_range_m=(v["scene.depth_min_m"], v["scene.depth_max_m"]),
            wall_depth_m=v["scene.wall_depth_m"],
            texture=TextureConfig(v["scene.texture_sigma_px"], v["scene.texture_contrast"], v["scene.texture_mean"]),
            height=v["scene.height"], width=v["scene.width"], seed=v["scene.seed"]))

    def model(self) -> ModelConfig:
        v = self.values
        return self._section("model", lambda: ModelConfig(
            num_bins=v["encoding.num_bins"], base_channels=v["model.base_channels"],
            num_levels=v["model.num_levels"], attention_dim=v["model.attention_dim"],
            attention_stride=v["model.attention_stride"], rdb_layers=v["model.rdb_layers"],
            rdb_growth=v["model.rdb_growth"], use_fdcm=v["model.use_fdcm"], use_mdfb=v["model.use_mdfb"],
            depth_bias_init=v["model.depth_bias_init"], seed=v["model.seed"]))

    def loss(self) -> LossConfig:
        return self._section("loss", lambda: LossConfig(self["loss.alpha"], self["loss.beta"]))

    def train(self):
        from .training import TrainConfig
        v = self.values
        if v["train.epochs"] < 0:
            raise ConfigError("invalid train.* settings: train.epochs must be >= 0")
        return self._section("train", lambda: TrainConfig(
            lr=v["train.lr"], batch_size=v["train.batch_size"], seed=v["train.seed"], loss=self.loss(),
            max_iterations=v["train.max_iterations"]))


def describe_keys() -> str:
    """One line per key: path, unit, default, help."""
    width = max(len(k) for k in KEYS)
    lines = []
    for key, spec in KEYS.items():
        default = dump_flat([(key, spec.default)]).split(" = ", 1)[1].strip()
        lines.append(f"  {key:<{width}}  [{spec.unit}]  default {default}: {spec.help}")
    return "\n".join(lines)

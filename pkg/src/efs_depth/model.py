"""EDFF depth network: shallow extraction, cross-modal attention, UNet trunk, multi-level depth fusion."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Conv2d, LayerNorm, Module, ShapeError, Tensor, ops


@dataclass(frozen=True)
class ModelConfig:
    num_bins: int = 8
    base_channels: int = 16
    num_levels: int = 3
    attention_dim: int = 16
    attention_stride: int = 2   # Q/K/V tokens live on a grid this much coarser
    rdb_layers: int = 3
    rdb_growth: int = 8
    use_fdcm: bool = True
    use_mdfb: bool = True
    depth_bias_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_levels < 2:
            raise ValueError("num_levels must be >= 2")
        if self.attention_dim <= 0 or self.base_channels <= 0:
            raise ValueError("attention_dim and base_channels must be positive")
        if self.num_bins < 2:
            raise ValueError("num_bins must be >= 2")
        if self.attention_stride < 1:
            raise ValueError("attention_stride must be >= 1")

    def to_dict(self):
        return asdict(self)

    @property
    def size_multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return math.lcm(2 ** (self.num_levels - 1), self.attention_stride)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 128.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


class ShallowExtractor(Module):
    def __init__(self, rng, in_ch, channels):
        self.conv1 = Conv2d(rng, in_ch, channels)
        self.conv2 = Conv2d(rng, channels, channels)

    def forward(self, x):
        return self.conv2(ops.relu(self.conv1(x)))


class AttentionBlock(Module):
    """Cross-modal attention: event-domain queries against focal-distance keys and values.

    With K and V laid out as (tokens x channels) and Q as (channels x tokens),
    the attention map ``Softmax(K Q / sqrt(d))`` is normalized over key tokens
    (its columns sum to 1) and the output is ``V^T`` times that map, giving
    one convex combination of value vectors per query token.
    """

    def __init__(self, rng, channels, dim, stride=1, mlp_ratio=2):
        if channels != dim:
            raise ShapeError(f"attention block expects {dim} channels, got {channels}")
        self.dim = dim
        self.stride = stride
        self.norm_v = LayerNorm(channels)
        self.norm_d = LayerNorm(channels)
        self.q_proj = Conv2d(rng, channels, dim, kernel=stride, stride=stride, padding=0)
        self.k_proj = Conv2d(rng, channels, dim, kernel=stride, stride=stride, padding=0)
        self.v_proj = Conv2d(rng, channels, dim, kernel=stride, stride=stride, padding=0)
        self.norm_mlp = LayerNorm(channels)
        self.fc1 = Conv2d(rng, channels, channels * mlp_ratio, kernel=1)
        self.fc2 = Conv2d(rng, channels * mlp_ratio, channels, kernel=1)

    def attention_map(self, f_v, f_d):
        q = self.q_proj(self.norm_v(f_v))
        k = self.k_proj(self.norm_d(f_d))
        b, c, h, w = q.shape
        q = q.reshape(b, c, h * w)                     # C x HW
        k = k.reshape(b, c, h * w).transpose(0, 2, 1)  # HW x C
        logits = ops.matmul(k, q) * (1.0 / math.sqrt(self.dim))
        return ops.softmax(logits, axis=1), (b, c, h, w)

    def forward(self, f_v, f_d):
        if f_v.shape != f_d.shape:
            raise ShapeError(f"attention inputs differ: {f_v.shape} vs {f_d.shape}")
        if f_v.shape[1] != self.dim:
            raise ShapeError(f"attention expects {self.dim} channels, got {f_v.shape[1]}")
        attn, (b, c, h, w) = self.attention_map(f_v, f_d)
        v = self.v_proj(self.norm_d(f_d)).reshape(b, c, h * w)  # == (HW x C)^T
        out = ops.matmul(v, attn).reshape(b, c, h, w)
        if self.stride > 1:
            out = ops.upsample_nearest(out, self.stride)
        y = f_v + out
        return y + self.fc2(ops.relu(self.fc1(self.norm_mlp(y))))


class ConvFusion(Module):
    """Plain convolutional stand-in for the attention block (ablation rows)."""

    def __init__(self, rng, channels, hidden):
        self.reduce = Conv2d(rng, 2 * channels, hidden, kernel=1)
        self.mix = Conv2d(rng, hidden, channels)

    def forward(self, f_v, f_d):
        return f_v + self.mix(ops.relu(self.reduce(ops.concat([f_v, f_d], axis=1))))


class ConvBlock(Module):
    def __init__(self, rng, in_ch, out_ch, stride=1):
        self.conv1 = Conv2d(rng, in_ch, out_ch, stride=stride)
        self.conv2 = Conv2d(rng, out_ch, out_ch)

    def forward(self, x):
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


class UNet(Module):
    """Encoder halves resolution per level; decoder emits a 1-channel depth at every level."""

    def __init__(self, rng, channels, levels, depth_bias=0.0):
        widths = [channels * 2**i for i in range(levels)]
        self.levels = levels
        self.enc = [ConvBlock(rng, channels, widths[0])]
        for i in range(1, levels):
            self.enc.append(ConvBlock(rng, widths[i - 1], widths[i], stride=2))
        self.dec = [ConvBlock(rng, widths[i + 1] + widths[i], widths[i]) for i in range(levels - 1)]
        self.heads = [Conv2d(rng, widths[i], 1) for i in range(levels)]
        for head in self.heads:
            head.bias.data[:] = depth_bias

    def forward(self, x):
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
        depths = [self.heads[-1](x)]
        for i in range(self.levels - 2, -1, -1):
            x = self.dec[i](ops.concat([ops.upsample_nearest(x, 2), skips[i]], axis=1))
            depths.append(self.heads[i](x))
        return depths  # coarse -> fine


class ResidualDenseBlock(Module):
    def __init__(self, rng, channels, layers, growth):
        self.convs = [Conv2d(rng, channels + i * growth, growth) for i in range(layers)]
        self.fuse = Conv2d(rng, channels + layers * growth, channels, kernel=1)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(ops.relu(conv(ops.concat(feats, axis=1))))
        return x + self.fuse(ops.concat(feats, axis=1))


class FusionStage(Module):
    """Refines a finer depth map with the (already fused) depth one level coarser."""

    def __init__(self, rng, channels, rdb_layers, rdb_growth):
        self.conv_in = Conv2d(rng, 5, channels)
        self.rdb = ResidualDenseBlock(rng, channels, rdb_layers, rdb_growth)
        self.conv_mid = Conv2d(rng, channels, 4)
        self.conv_out = Conv2d(rng, 1, 1, zero_init=True)

    def forward(self, coarse, fine):
        x = ops.concat([ops.pixel_unshuffle(fine, 2), coarse], axis=1)
        x = self.conv_mid(self.rdb(ops.relu(self.conv_in(x))))
        return fine + self.conv_out(ops.pixel_shuffle(x, 2))


class MultiLevelFusion(Module):
    def __init__(self, rng, levels, channels, rdb_layers, rdb_growth):
        self.stages = [FusionStage(rng, channels, rdb_layers, rdb_growth) for _ in range(levels - 1)]

    def forward(self, depths):
        fused = depths[0]
        for stage, fine in zip(self.stages, depths[1:]):
            if fine.shape[2] != 2 * fused.shape[2] or fine.shape[3] != 2 * fused.shape[3]:
                raise ShapeError(f"depth levels are not dyadic: {fused.shape} -> {fine.shape}")
            fused = stage(fused, fine)
        return fused


class ConvRefine(Module):
    """Convolutional stand-in for multi-level fusion: residual refinement of the finest depth."""

    def __init__(self, rng, hidden):
        self.conv1 = Conv2d(rng, 1, hidden)
        self.conv2 = Conv2d(rng, hidden, hidden)
        self.conv_out = Conv2d(rng, hidden, 1, zero_init=True)

    def forward(self, depths):
        fine = depths[-1]
        return fine + self.conv_out(ops.relu(self.conv2(ops.relu(self.conv1(fine)))))


def mdfb_fuse(initial_depths, fusion: MultiLevelFusion):
    if len(initial_depths) == 1:
        return initial_depths[0]
    return fusion(initial_depths)


class EDFFModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.base_channels
        in_ch = 2 * cfg.num_bins
        self.extract_v = ShallowExtractor(rng, in_ch, c)
        self.extract_d = ShallowExtractor(rng, in_ch, c)
        self.fdcm = AttentionBlock(rng, c, cfg.attention_dim, cfg.attention_stride)
        if not cfg.use_fdcm:
            # parameter-matched replacement: 1x1 (2c -> h) + 3x3 (h -> c)
            hidden = max(1, round(self.fdcm.num_parameters() / (11 * c + 1)))
            self.fdcm = ConvFusion(rng, c, hidden)
        self.unet = UNet(rng, c, cfg.num_levels, cfg.depth_bias_init)
        self.mdfb = MultiLevelFusion(rng, cfg.num_levels, c, cfg.rdb_layers, cfg.rdb_growth)
        if not cfg.use_mdfb:
            target = self.mdfb.num_parameters()
            # 9h^2 + 20h + 1 parameters
            hidden = max(1, round((-20 + math.sqrt(400 + 36 * max(target - 1, 0))) / 18))
            self.mdfb = ConvRefine(rng, hidden)
        self.sensor_size: tuple[int, int] | None = None

    def check_input(self, height, width):
        m = self.cfg.size_multiple
        if height % m or width % m:
            raise ShapeError(f"spatial size {height}x{width} must be divisible by {m}")
        if self.sensor_size is not None and (height, width) != tuple(self.sensor_size):
            raise ShapeError(f"model was trained on {self.sensor_size[0]}x{self.sensor_size[1]}, got {height}x{width}")

    def shallow_extract(self, voxel, surface):
        v = _flatten_bins(voxel, self.cfg.num_bins)
        d = _flatten_bins(surface, self.cfg.num_bins)
        if v.shape != d.shape:
            raise ShapeError(f"voxel {voxel.shape} and surface {surface.shape} differ")
        return self.extract_v(v), self.extract_d(d)

    def forward(self, voxel, surface):
        """Returns (final depth, initial depths coarse -> fine), each (B, 1, H, W)."""
        f_v, f_d = self.shallow_extract(voxel, surface)
        self.check_input(f_v.shape[2], f_v.shape[3])
        fused = self.fdcm(f_v, f_d)
        initial = self.unet(fused)
        final = self.mdfb(initial) if len(initial) > 1 else initial[0]
        return final, initial


def _flatten_bins(x, num_bins) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if x.ndim == 4:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 5 or x.shape[1] != num_bins or x.shape[2] != 2:
        raise ShapeError(f"expected (B, {num_bins}, 2, H, W) encoding, got {x.shape}")
    b, n, two, h, w = x.shape
    return x.reshape(b, n * two, h, w)


def edff_loss(pred: Tensor, gt, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Masked L2 norm of the depth error plus masked L1 norm of the spatial-gradient error.

    Inputs are (B, 1, H, W) or (H, W); the loss is averaged over the batch.
    Gradient pixels count only where both stencil pixels are masked in.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    mask = (np.asarray(mask) > 0).astype(pred.dtype)
    if pred.ndim == 2:
        pred = pred.reshape((1, 1) + pred.shape)
        gt = gt.reshape((1, 1) + gt.shape)
        mask = mask.reshape((1, 1) + mask.shape)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ShapeError(f"edff_loss: pred {pred.shape}, gt {gt.shape}, mask {mask.shape} must match")
    axes = (1, 2, 3)
    m = Tensor(mask)
    depth_term = ops.l2(pred * m - Tensor(gt * mask), axis=axes)

    mx = mask[..., :, 1:] * mask[..., :, :-1]
    my = mask[..., 1:, :] * mask[..., :-1, :]
    gx_gt = (gt[..., :, 1:] - gt[..., :, :-1]) * mx
    gy_gt = (gt[..., 1:, :] - gt[..., :-1, :]) * my
    gx = (pred[..., :, 1:] - pred[..., :, :-1]) * Tensor(mx)
    gy = (pred[..., 1:, :] - pred[..., :-1, :]) * Tensor(my)
    smooth_term = ops.l1(gx - Tensor(gx_gt), axis=axes) + ops.l1(gy - Tensor(gy_gt), axis=axes)
    return (depth_term * cfg.alpha + smooth_term * cfg.beta).mean()

"""Conditional noise-prediction U-Net.

Conditioning images are concatenated to the noisy NOCS map along channels.
A sinusoidal time embedding and a category lookup embedding are summed and
added inside every residual block.

The noise estimate is ``sigma_t * noisy + alpha_t * F``, where ``F`` is the
convolutional output. At high noise the estimate then tends to the noisy input
itself, which the convolutions alone reproduce too coarsely for the
deterministic sampler. ``alpha_t`` and ``sigma_t`` follow the default linear
schedule, interpolated at fractional steps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import ShapeError
from ..scheduler import NoiseSchedule


@dataclass(frozen=True)
class DenoiserConfig:
    base: int = 32
    levels: int = 2
    blocks: int = 2
    feat_channels: int = 6
    n_categories: int = 2
    emb_dim: int = 128
    groups: int = 8
    max_width_mult: int = 2

    def __post_init__(self):
        if self.base % self.groups:
            raise ValueError("base width must be divisible by the group count")
        if min(self.base, self.levels + 1, self.blocks, self.emb_dim, self.n_categories + 1) < 1:
            raise ValueError(f"invalid architecture {self}")

    @property
    def in_channels(self) -> int:
        return 3 + 3 + 3 + self.feat_channels

    def widths(self) -> list[int]:
        return [self.base * min(2**i, self.max_width_mult) for i in range(self.levels + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def sinusoidal(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style encoding of (possibly fractional) step indices."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class NocsUNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = cfg = config
        d = cfg.emb_dim
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.category = nn.Embedding(cfg.n_categories + 1, d)  # row 0: unknown category
        widths = cfg.widths()
        self.stem = nn.Conv2d(cfg.in_channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsample = nn.ModuleList()
        c = widths[0]
        for i, w in enumerate(widths):
            blocks = nn.ModuleList()
            for _ in range(cfg.blocks):
                blocks.append(ResBlock(c, w, d, cfg.groups))
                c = w
            self.down_blocks.append(blocks)
            if i < cfg.levels:
                self.downsample.append(nn.Conv2d(c, c, 3, stride=2, padding=1))

        self.upsample = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.upsample.append(nn.Conv2d(c, w, 3, padding=1))
            blocks = nn.ModuleList([ResBlock(2 * w, w, d, cfg.groups)])
            for _ in range(cfg.blocks - 1):
                blocks.append(ResBlock(w, w, d, cfg.groups))
            self.up_blocks.append(blocks)
            c = w

        self.out_norm = nn.GroupNorm(cfg.groups, c)
        self.out_conv = nn.Conv2d(c, 3, 3, padding=1)
        self.register_buffer("lambdas", torch.from_numpy(NoiseSchedule.linear().lambdas.copy()), persistent=False)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """Truncated-normal fan-in init, zero biases, zero output convolution."""
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                std = 1.0 / math.sqrt(fan_in)
                nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Embedding):
                nn.init.trunc_normal_(m.weight, std=1.0, a=-2.0, b=2.0)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def skip_gains(self, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``(alpha_t, sigma_t)`` at fractional steps, clamped to the table."""
        lam = self.lambdas.to(t.dtype)
        t = t.clamp(0, len(lam) - 1)
        lo = t.floor().long().clamp(max=len(lam) - 2)
        lam_t = torch.lerp(lam[lo], lam[lo + 1], t - lo.to(t.dtype))
        return torch.sigmoid(2.0 * lam_t).sqrt(), torch.sigmoid(-2.0 * lam_t).sqrt()

    def embed(self, t: torch.Tensor, category: torch.Tensor) -> torch.Tensor:
        return self.time_mlp(sinusoidal(t, self.config.emb_dim)) + self.category(category)

    def forward(self, noisy, cond, t, category):
        """``noisy`` (B, 3, H, W), ``cond`` (B, 6 + M, H, W), ``t`` (B,), ``category`` (B,) -> (B, 3, H, W)."""
        cfg = self.config
        b, c, h, w = noisy.shape
        if c != 3:
            raise ShapeError(f"noisy NOCS must have 3 channels, got {c}")
        if cond.shape != (b, cfg.in_channels - 3, h, w):
            raise ShapeError(f"conditioning shape {tuple(cond.shape)} != {(b, cfg.in_channels - 3, h, w)}")
        if h % 2**cfg.levels or w % 2**cfg.levels:
            raise ShapeError(f"image size {h}x{w} not divisible by {2 ** cfg.levels}")
        if t.shape != (b,) or category.shape != (b,):
            raise ShapeError("time and category need one entry per sample")
        if int(category.max()) > cfg.n_categories or int(category.min()) < 0:
            raise ShapeError(f"category id outside [0, {cfg.n_categories}]")

        t = t.to(noisy.dtype)
        emb = self.embed(t, category)
        x = self.stem(torch.cat([noisy, cond], dim=1))
        skips = []
        for i, blocks in enumerate(self.down_blocks):
            for blk in blocks:
                x = blk(x, emb)
            if i < cfg.levels:
                skips.append(x)
                x = self.downsample[i](x)
        for up, blocks in zip(self.upsample, self.up_blocks):
            x = up(F.interpolate(x, scale_factor=2.0, mode="nearest"))
            x = torch.cat([x, skips.pop()], dim=1)
            for blk in blocks:
                x = blk(x, emb)
        alpha, sigma = self.skip_gains(t)
        out = self.out_conv(F.silu(self.out_norm(x)))
        return sigma[:, None, None, None] * noisy + alpha[:, None, None, None] * out


def build(config: DenoiserConfig, seed: int = 0, dtype=torch.float32) -> NocsUNet:
    """Construct with a seeded init, independent of the global torch RNG state."""
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        net = NocsUNet(config)
    finally:
        torch.random.set_rng_state(state)
    return net.to(dtype)


def param_count(config: DenoiserConfig) -> int:
    return sum(p.numel() for p in NocsUNet(config).parameters())


def flat_params(net: nn.Module) -> np.ndarray:
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()]).cpu().numpy()


def set_flat_params(net: nn.Module, flat: np.ndarray) -> None:
    flat = np.asarray(flat)
    total = sum(p.numel() for p in net.parameters())
    if flat.shape != (total,):
        raise ShapeError(f"expected {total} parameters, got {flat.shape}")
    if not np.all(np.isfinite(flat)):
        raise ValueError("parameters must be finite")
    offset = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            p.copy_(torch.from_numpy(flat[offset : offset + n].reshape(p.shape)).to(p.dtype))
            offset += n

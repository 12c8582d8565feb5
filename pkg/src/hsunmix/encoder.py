"""Dual-branch encoder: a spatial attention pyramid, a spectral 3-D conv
branch, and a fusion head that produces abundances on the simplex."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .attention import AttentionConfig, Downsample, MHSABlock, MSDABlock, OverlappingTokenizer
from .nn import Conv2d, Conv3d, LayerNorm, Linear, Module, Parameter, uniform_fan_in, zero_
from .tensor import Tensor, amax, concat, mean, transpose

ABLATIONS = (None, "spatial", "spectral")


def default_stage_count(bands):
    """Rule of thumb for the spectral stage count: floor(log2 L) - 3, at least 1."""
    return max(1, int(math.floor(math.log2(bands))) - 3)


@dataclass
class EncoderConfig:
    C: int = 108
    gamma: float = 1.0
    spectral_stage_count: Optional[int] = None
    spectral_channels: int = 16
    ca_reduction: int = 4
    window: int = 3
    mlp_ratio: int = 4
    pool_grid: int = 4

    def __post_init__(self):
        if self.C < 3 or self.C % 3:
            raise ValueError("EncoderConfig: C must be a positive multiple of 3")
        if self.gamma < 1:
            raise ValueError("EncoderConfig: gamma must be >= 1")
        if self.spectral_stage_count is not None and self.spectral_stage_count < 0:
            raise ValueError("EncoderConfig: spectral_stage_count must be >= 0")
        if self.spectral_channels < 1 or self.ca_reduction < 1 or self.pool_grid < 1:
            raise ValueError("EncoderConfig: widths must be >= 1")

    def stages(self, bands):
        if self.spectral_stage_count is None:
            return default_stage_count(bands)
        return self.spectral_stage_count


class ChannelAttention(Module):
    """Channel gate sigmoid(MLP(avg) + MLP(max)) with a shared bias-free MLP.

    Pools over every axis except the last, so it serves both (H, W, C)
    images and (D, H, W, C) spectral volumes.
    """

    def __init__(self, channels, reduction, rng):
        if channels < reduction:
            raise ValueError(f"channel attention: {channels} channels < reduction {reduction}")
        hidden = max(1, channels // reduction)
        self.w1 = Parameter(uniform_fan_in(rng, (channels, hidden), channels))
        self.w2 = Parameter(uniform_fan_in(rng, (hidden, channels), hidden))

    def weights(self, F):
        axes = tuple(range(F.ndim - 1))
        avg = mean(F, axis=axes).reshape(1, -1)
        mx = amax(F.reshape(-1, F.shape[-1]), axis=0).reshape(1, -1)

        def mlp(z):
            return ops.relu(z @ self.w1) @ self.w2

        return ops.sigmoid(mlp(avg) + mlp(mx)).reshape(-1)

    def forward(self, F):
        return F * self.weights(F)


def channel_attention(F, layer):
    return layer(F)


class SpatialBranch(Module):
    """Tokenizer, four attention stages with three downsamplings, a final
    layer norm, then pooled resize back to full resolution and a per-pixel
    linear map."""

    def __init__(self, bands, R, cfg, rng):
        C, d = cfg.C, cfg.C // 3
        self.cfg = cfg
        self.tokenizer = OverlappingTokenizer(bands, C, rng)
        self.stage1 = [MSDABlock(AttentionConfig(3, d, cfg.window), rng, cfg.mlp_ratio) for _ in range(2)]
        self.down1 = Downsample(C, rng)
        self.stage2 = [MSDABlock(AttentionConfig(6, d, cfg.window), rng, cfg.mlp_ratio)]
        self.down2 = Downsample(2 * C, rng)
        self.stage3 = [MHSABlock(4 * C, 12, rng, cfg.mlp_ratio) for _ in range(2)]
        self.down3 = Downsample(4 * C, rng)
        self.stage4 = [MHSABlock(8 * C, 24, rng, cfg.mlp_ratio)]
        self.norm = LayerNorm(8 * C)
        # The pooled features barely vary across the image, so a random head
        # only adds a global logit offset, and full-image Adam steps move
        # every pixel's logits together until the softmax saturates on one
        # endmember.  Starting at zero begins training from uniform
        # abundances.
        self.head = zero_(Linear(8 * C, R, rng))

    def features(self, Y):
        """Stage outputs T1..T4 (for inspection and shape tests)."""
        rows, cols = Y.shape[:2]
        if rows < 16 or cols < 16:
            raise ValueError(f"spatial branch needs at least 16x16 pixels, got {rows}x{cols}")
        out = []
        x = self.tokenizer(Y)
        for stage, down in ((self.stage1, self.down1), (self.stage2, self.down2),
                            (self.stage3, self.down3), (self.stage4, None)):
            for blk in stage:
                x = blk(x)
            out.append(x)
            if down is not None:
                x = down(x)
        return out

    def forward(self, Y):
        rows, cols = Y.shape[:2]
        top = self.norm(self.features(Y)[-1])
        g = self.cfg.pool_grid
        pooled = ops.adaptive_avg_pool2d(top, (g, g))
        return self.head(ops.bilinear_resize(pooled, (rows, cols)))


def spatial_branch(Y, branch):
    return branch(Y)


class SpectralBranch(Module):
    """Band axis treated as depth: stem plus N stages of depth conv, pooling
    and channel attention, then a 3x3 conv from depth*channels to R."""

    def __init__(self, bands, R, cfg, rng):
        n = cfg.stages(bands)
        if bands < 2 ** n:
            raise ValueError(f"spectral branch: {bands} bands cannot be pooled {n} times")
        c = cfg.spectral_channels
        self.n_stages = n
        self.stem = Conv3d(1, c, 3, rng)
        self.stem_ca = ChannelAttention(c, min(cfg.ca_reduction, c), rng)
        self.convs = [Conv3d(c, c, 3, rng) for _ in range(n)]
        self.cas = [ChannelAttention(c, min(cfg.ca_reduction, c), rng) for _ in range(n)]
        depth = bands
        for _ in range(n):
            depth //= 2
        self.depth_out = depth
        self.out = Conv2d(depth * c, R, 3, rng)

    def forward(self, Y):
        H, W, L = Y.shape
        x = transpose(Y, (2, 0, 1)).reshape(L, H, W, 1)
        x = self.stem_ca(ops.leaky_relu(self.stem(x)))
        for conv, ca in zip(self.convs, self.cas):
            x = ca(ops.maxpool3d(ops.leaky_relu(conv(x))))
        D, _, _, c = x.shape
        x = transpose(x, (1, 2, 0, 3)).reshape(H, W, D * c)
        return self.out(x)


def spectral_branch(Y, branch):
    return branch(Y)


class Fusion(Module):
    def __init__(self, R, cfg, rng):
        self.gamma = cfg.gamma
        self.ca = ChannelAttention(2 * R, min(cfg.ca_reduction, 2 * R), rng)
        self.conv = Conv2d(2 * R, R, 3, rng)

    def forward(self, F_spatial, F_spectral):
        if F_spatial.shape != F_spectral.shape:
            raise ValueError(f"fuse: branch outputs {F_spatial.shape} and {F_spectral.shape} differ")
        F = concat([F_spatial, F_spectral], axis=-1)
        F = F + self.ca(F)
        return ops.scaled_softmax(self.conv(F), self.gamma)


def fuse(F_spatial, F_spectral, layer):
    return layer(F_spatial, F_spectral)


class Encoder(Module):
    """Cube (rows, cols, L) -> abundances (rows, cols, R).

    ``ablate`` names a branch whose output is replaced by zeros; its
    parameters are still created (so checkpoints keep one layout) but
    receive no gradient.
    """

    def __init__(self, bands, R, cfg, rng, ablate=None):
        if ablate not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablate!r}; choose spatial or spectral")
        self.ablate = ablate
        self.spatial = SpatialBranch(bands, R, cfg, rng)
        self.spectral = SpectralBranch(bands, R, cfg, rng)
        self.fusion = Fusion(R, cfg, rng)
        self.R = R

    def forward(self, Y):
        zeros = Tensor(np.zeros(Y.shape[:2] + (self.R,)))
        fa = zeros if self.ablate == "spatial" else self.spatial(Y)
        fe = zeros if self.ablate == "spectral" else self.spectral(Y)
        return self.fusion(fa, fe)

"""Spatial-branch building blocks: dilated and dense attention blocks,
conditional position embedding, overlapping tokenizer and downsampling."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import ops
from .nn import Conv2d, LayerNorm, Linear, Module, Parameter, uniform_fan_in
from .tensor import concat

swda = ops.swda


def default_rates(heads):
    """Dilation per head, grouped over rates 1, 2, 3 (6 heads -> 1,1,2,2,3,3)."""
    return [1 + (3 * i) // heads for i in range(heads)]


@dataclass
class AttentionConfig:
    heads: int
    head_dim: int
    window: int = 3
    dilation_rates: List[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.dilation_rates:
            self.dilation_rates = default_rates(self.heads)
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("AttentionConfig: heads and head_dim must be >= 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("AttentionConfig: window must be odd and >= 1")
        if len(self.dilation_rates) != self.heads or min(self.dilation_rates) < 1:
            raise ValueError("AttentionConfig: need one dilation rate >= 1 per head")

    @property
    def channels(self):
        return self.heads * self.head_dim


def _split_qkv(X, qkv_proj, heads):
    H, W, C = X.shape
    if C % heads:
        raise ValueError(f"{C} channels cannot be split into {heads} heads")
    d = C // heads
    qkv = qkv_proj(X)
    return [[qkv[:, :, part * C + h * d: part * C + (h + 1) * d] for h in range(heads)]
            for part in range(3)]


def msda(X, cfg, qkv_proj, out_proj):
    """Multi-scale dilated attention: one SWDA per head at that head's rate,
    heads concatenated and mixed by ``out_proj``."""
    if X.shape[-1] != cfg.channels:
        raise ValueError(f"msda: input has {X.shape[-1]} channels, config expects {cfg.channels}")
    qs, ks, vs = _split_qkv(X, qkv_proj, cfg.heads)
    heads = [swda(q, k, v, r, cfg.window) for q, k, v, r in zip(qs, ks, vs, cfg.dilation_rates)]
    return out_proj(concat(heads, axis=-1))


def mhsa(X, heads, qkv_proj, out_proj):
    """Dense multi-head self-attention over all H*W positions."""
    H, W, C = X.shape
    qs, ks, vs = _split_qkv(X, qkv_proj, heads)
    d = C // heads
    outs = []
    for q, k, v in zip(qs, ks, vs):
        o = ops.dense_attention(q.reshape(H * W, d), k.reshape(H * W, d), v.reshape(H * W, d))
        outs.append(o.reshape(H, W, d))
    return out_proj(concat(outs, axis=-1))


class CPE(Module):
    """Conditional position embedding: X + depthwise 3x3 conv(X)."""

    def __init__(self, channels, rng):
        self.weight = Parameter(uniform_fan_in(rng, (3, 3, channels), 9))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, X):
        return X + (ops.depthwise_conv2d(X, self.weight) + self.bias)


class _Block(Module):
    """Pre-norm transformer block; subclasses supply the attention mixer."""

    def __init__(self, channels, rng, mlp_ratio=4):
        self.cpe = CPE(channels, rng)
        self.norm1 = LayerNorm(channels)
        self.qkv = Linear(channels, 3 * channels, rng)
        self.proj = Linear(channels, channels, rng)
        self.norm2 = LayerNorm(channels)
        self.fc1 = Linear(channels, mlp_ratio * channels, rng)
        self.fc2 = Linear(mlp_ratio * channels, channels, rng)

    def attend(self, X):
        raise NotImplementedError

    def forward(self, X):
        X1 = X + self.attend(self.norm1(self.cpe(X)))
        return X1 + self.fc2(ops.gelu(self.fc1(self.norm2(X1))))


class MSDABlock(_Block):
    def __init__(self, cfg, rng, mlp_ratio=4):
        super().__init__(cfg.channels, rng, mlp_ratio)
        self.cfg = cfg

    def attend(self, X):
        return msda(X, self.cfg, self.qkv, self.proj)


class MHSABlock(_Block):
    def __init__(self, channels, heads, rng, mlp_ratio=4):
        if channels % heads:
            raise ValueError(f"MHSABlock: {channels} channels not divisible by {heads} heads")
        super().__init__(channels, rng, mlp_ratio)
        self.heads = heads

    def attend(self, X):
        return mhsa(X, self.heads, self.qkv, self.proj)


def msda_block(X, block):
    return block(X)


def mhsa_block(X, block):
    return block(X)


class OverlappingTokenizer(Module):
    """Two zero-padded 3x3 stride-1 convs with GELU between: L -> C channels."""

    def __init__(self, bands, channels, rng):
        self.conv1 = Conv2d(bands, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, Y):
        return self.conv2(ops.gelu(self.conv1(Y)))


class Downsample(Module):
    """3x3 stride-2 conv, pad 1: (H, W, C) -> (ceil(H/2), ceil(W/2), 2C)."""

    def __init__(self, channels, rng):
        self.conv = Conv2d(channels, 2 * channels, 3, rng, stride=2)

    def forward(self, F):
        if F.shape[0] < 2 or F.shape[1] < 2:
            raise ValueError(f"downsample: input {F.shape[:2]} smaller than 2x2")
        return self.conv(F)


def overlapping_tokenize(Y, tokenizer):
    return tokenizer(Y)


def downsample(F, layer):
    return layer(F)

"""Registry of finite-difference checks covering every differentiable op
and block at toy shapes.

Each entry builds its inputs from a fixed seed and returns the largest
relative error over the tensors it checks.  Inputs to piecewise ops are
drawn at least 0.05 away from their kinks, well beyond 10 * eps.
"""
import numpy as np

from . import ops
from .attention import CPE, AttentionConfig, Downsample, MHSABlock, MSDABlock, OverlappingTokenizer
from .decoder import Decoder, NonlinearHead
from .encoder import ChannelAttention, Encoder, EncoderConfig, Fusion, SpectralBranch
from .gradcheck import grad_check, weighted_sum
from .tensor import Tensor, amax, precision, concat, matmul, mean, tsum
from .training import loss_re, loss_sad, total_loss

SUITE = {}
DEFAULT_TOLERANCE = 2e-3
# Everything below runs in float64, so a small step costs little rounding
# error.  Steps of 1e-3 or 1e-4 often straddle a max-pool or hardtanh kink
# in the convolutional paths, where a single weight moves every voxel.
SUITE_EPS = 1e-5


def register(name):
    def deco(fn):
        SUITE[name] = fn
        return fn
    return deco


def _rng(name):
    return np.random.default_rng(sum(map(ord, name)))


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _check_all(fn, inputs, eps, coords=None):
    """Check ``fn(*inputs)`` with respect to each input in turn."""
    worst = 0.0
    for i, x in enumerate(inputs):
        def f(z, i=i):
            args = list(inputs)
            args[i] = z
            return weighted_sum(fn(*args), seed=i)
        worst = max(worst, grad_check(f, x, eps, coords=coords))
    return worst


def _check_module(module, forward, eps, coords=12):
    """Check a scalar of ``forward()`` against every parameter of ``module``."""
    worst = 0.0
    for n, (_, p) in enumerate(module.named_parameters()):
        worst = max(worst, grad_check(lambda _p: weighted_sum(forward(), seed=1), p, eps,
                                      coords=coords, seed=n))
    return worst


# -- elementwise and products -------------------------------------------------

@register("hadamard")
def _hadamard(eps):
    r = _rng("hadamard")
    a, b, c = _t(r.normal(size=(3, 4, 5))), _t(r.normal(size=(3, 4, 5))), _t(r.normal(size=(3, 4, 1)))
    return max(_check_all(ops.hadamard, [a, b], eps), _check_all(ops.hadamard, [a, c], eps))


@register("mode3_product")
def _mode3(eps):
    r = _rng("mode3")
    return _check_all(ops.mode3_product, [_t(r.normal(size=(3, 4, 3))), _t(r.normal(size=(3, 6)))], eps)


@register("broadcast_field_mul")
def _bfm(eps):
    r = _rng("bfm")
    return _check_all(ops.broadcast_field_mul, [_t(r.normal(size=(3, 4, 1))), _t(r.normal(size=(3, 4, 5)))], eps)


@register("linear")
def _linear(eps):
    r = _rng("linear")
    return _check_all(ops.linear, [_t(r.normal(size=(3, 4, 5))), _t(r.normal(size=(5, 2))),
                                   _t(r.normal(size=(2,)))], eps)


@register("matmul")
def _matmul(eps):
    r = _rng("matmul")
    return _check_all(matmul, [_t(r.normal(size=(2, 3, 4))), _t(r.normal(size=(4, 5)))], eps)


@register("reductions")
def _reductions(eps):
    r = _rng("reductions")
    x = _t(r.permutation(60).reshape(3, 4, 5) * 0.1)
    return max(_check_all(lambda a: tsum(a, axis=(0, 1)), [x], eps),
               _check_all(lambda a: mean(a, axis=-1), [x], eps),
               _check_all(lambda a: amax(a, axis=(0, 1)), [x], eps),
               _check_all(lambda a, b: concat([a, b], axis=1), [x, _t(r.normal(size=(3, 2, 5)))], eps))


# -- convolutions and pooling -----------------------------------------------------

@register("conv2d")
def _conv2d(eps):
    r = _rng("conv2d")
    x = _t(r.normal(size=(5, 6, 3)))
    k = _t(r.normal(size=(3, 3, 3, 2)))
    return max(_check_all(lambda a, b: ops.conv2d(a, b), [x, k], eps),
               _check_all(lambda a, b: ops.conv2d(a, b, stride=(2, 2)), [x, k], eps))


@register("depthwise_conv2d")
def _dwconv(eps):
    r = _rng("dwconv")
    return _check_all(ops.depthwise_conv2d, [_t(r.normal(size=(5, 4, 3))), _t(r.normal(size=(3, 3, 3)))], eps)


@register("conv3d")
def _conv3d(eps):
    r = _rng("conv3d")
    return _check_all(ops.conv3d, [_t(r.normal(size=(8, 2, 3, 2))), _t(r.normal(size=(3, 1, 1, 2, 3)))], eps)


@register("maxpool3d")
def _maxpool(eps):
    r = _rng("maxpool")
    # distinct values 0.1 apart: every window has a clear maximum
    x = _t(r.permutation(7 * 2 * 2 * 3).reshape(7, 2, 2, 3) * 0.1)
    return _check_all(ops.maxpool3d, [x], eps)


# -- activations ------------------------------------------------------------------

@register("relu")
def _relu(eps):
    return _check_all(ops.relu, [_t(_away_from_zero(_rng("relu"), (4, 5)))], eps)


@register("leaky_relu")
def _leaky(eps):
    return _check_all(ops.leaky_relu, [_t(_away_from_zero(_rng("leaky"), (4, 5)))], eps)


@register("gelu")
def _gelu(eps):
    return _check_all(ops.gelu, [_t(_rng("gelu").normal(size=(4, 5)) * 2)], eps)


@register("hardtanh")
def _hardtanh(eps):
    r = _rng("hardtanh")
    inside = r.uniform(-0.9, 0.9, size=10)
    outside = r.uniform(1.1, 2.0, size=10) * r.choice([-1.0, 1.0], size=10)
    return _check_all(ops.hardtanh, [_t(np.concatenate([inside, outside]).reshape(4, 5))], eps)


@register("sigmoid")
def _sigmoid(eps):
    return _check_all(ops.sigmoid, [_t(_rng("sigmoid").normal(size=(4, 5)) * 3)], eps)


@register("scaled_softmax")
def _softmax(eps):
    r = _rng("softmax")
    x = _t(r.normal(size=(3, 4, 5)))
    return max(_check_all(lambda a: ops.scaled_softmax(a, 1.0), [x], eps),
               _check_all(lambda a: ops.scaled_softmax(a, 2.5), [x], eps))


@register("layer_norm")
def _layer_norm(eps):
    r = _rng("layernorm")
    return _check_all(ops.layer_norm, [_t(r.normal(size=(3, 4, 6))), _t(r.normal(size=(6,))),
                                       _t(r.normal(size=(6,)))], eps)


# -- attention and resampling -------------------------------------------------

@register("swda")
def _swda(eps):
    r = _rng("swda")
    q, k, v = (_t(r.normal(size=(5, 6, 4))) for _ in range(3))
    return max(_check_all(lambda a, b, c: ops.swda(a, b, c, 1, 3), [q, k, v], eps),
               _check_all(lambda a, b, c: ops.swda(a, b, c, 2, 3), [q, k, v], eps))


@register("dense_attention")
def _dense(eps):
    r = _rng("dense")
    return _check_all(ops.dense_attention, [_t(r.normal(size=(6, 4))) for _ in range(3)], eps)


@register("resample")
def _resample(eps):
    r = _rng("resample")
    x = _t(r.normal(size=(5, 6, 2)))
    return max(_check_all(lambda a: ops.adaptive_avg_pool2d(a, (2, 3)), [x], eps),
               _check_all(lambda a: ops.bilinear_resize(a, (9, 7)), [x], eps))


@register("spectral_angle")
def _angle(eps):
    r = _rng("angle")
    return _check_all(ops.spectral_angle, [_t(r.uniform(0.1, 1, size=(3, 4, 6))),
                                           _t(r.uniform(0.1, 1, size=(3, 4, 6)))], eps)


@register("losses")
def _losses(eps):
    r = _rng("losses")
    Y, Yh = _t(r.uniform(0.1, 1, size=(3, 4, 6))), _t(r.uniform(0.1, 1, size=(3, 4, 6)))
    return max(_check_all(loss_re, [Y, Yh], eps), _check_all(loss_sad, [Y, Yh], eps),
               _check_all(lambda a, b: total_loss(a, b, 0.5)[0], [Y, Yh], eps))


# -- blocks -----------------------------------------------------------------------

@register("channel_attention")
def _ca(eps):
    r = _rng("ca")
    layer = ChannelAttention(8, 4, r)
    x = _t(r.normal(size=(4, 5, 8)))
    return max(_check_all(layer, [x], eps), _check_module(layer, lambda: layer(x), eps))


@register("cpe")
def _cpe(eps):
    r = _rng("cpe")
    layer = CPE(4, r)
    x = _t(r.normal(size=(5, 5, 4)))
    return max(_check_all(layer, [x], eps), _check_module(layer, lambda: layer(x), eps))


@register("msda_block")
def _msda_block(eps):
    r = _rng("msda")
    blk = MSDABlock(AttentionConfig(3, 2), r)
    x = _t(r.normal(size=(6, 6, 6)))
    return max(_check_all(blk, [x], eps, coords=40), _check_module(blk, lambda: blk(x), eps, coords=6))


@register("mhsa_block")
def _mhsa_block(eps):
    r = _rng("mhsa")
    blk = MHSABlock(6, 3, r)
    x = _t(r.normal(size=(5, 6, 6)))
    return max(_check_all(blk, [x], eps, coords=40), _check_module(blk, lambda: blk(x), eps, coords=6))


@register("tokenizer")
def _tokenizer(eps):
    r = _rng("tok")
    layer = OverlappingTokenizer(4, 6, r)
    x = _t(r.normal(size=(5, 5, 4)))
    return max(_check_all(layer, [x], eps, coords=30), _check_module(layer, lambda: layer(x), eps))


@register("downsample")
def _downsample(eps):
    r = _rng("down")
    layer = Downsample(3, r)
    x = _t(r.normal(size=(5, 6, 3)))
    return max(_check_all(layer, [x], eps), _check_module(layer, lambda: layer(x), eps))


@register("spectral_branch")
def _spectral(eps):
    r = _rng("spectral")
    br = SpectralBranch(16, 3, EncoderConfig(C=6, spectral_stage_count=2, spectral_channels=4,
                                             ca_reduction=2), r)
    x = _t(r.uniform(0.1, 1, size=(4, 4, 16)))
    return max(_check_all(br, [x], eps, coords=30), _check_module(br, lambda: br(x), eps, coords=6))


@register("fusion")
def _fusion(eps):
    r = _rng("fusion")
    layer = Fusion(3, EncoderConfig(C=6, gamma=1.0, ca_reduction=2), r)
    a, b = _t(r.normal(size=(4, 5, 3))), _t(r.normal(size=(4, 5, 3)))
    return max(_check_all(layer, [a, b], eps), _check_module(layer, lambda: layer(a, b), eps))


@register("nonlinear_head")
def _head(eps):
    r = _rng("head")
    head = NonlinearHead(8, r)
    head.weight.data[...] = r.normal(size=head.weight.shape)
    Y, Yl = _t(r.uniform(0.1, 1, size=(3, 3, 8))), _t(r.uniform(0.1, 1, size=(3, 3, 8)))
    return max(_check_all(head, [Y, Yl], eps, coords=30), _check_module(head, lambda: head(Y, Yl), eps))


@register("decoder")
def _decoder(eps):
    r = _rng("decoder")
    dec = Decoder(r.uniform(0.1, 1, size=(3, 8)), r)
    dec.head.weight.data[...] = r.normal(size=dec.head.weight.shape)
    A = _t(ops.softmax(Tensor(r.normal(size=(3, 3, 3)))).data)
    Y = _t(r.uniform(0.1, 1, size=(3, 3, 8)))
    return max(_check_all(lambda a: dec(a, Y)[0], [A], eps),
               _check_module(dec, lambda: dec(A, Y)[0], eps))


@register("encoder")
def _encoder(eps):
    """End to end on a 16x16x16 cube with R=3 (random coordinate subsets)."""
    r = _rng("encoder")
    enc = Encoder(16, 3, EncoderConfig(C=6, spectral_stage_count=2, spectral_channels=4), r)
    # the spatial head starts at zero, which would hide every gradient behind it
    head = enc.spatial.head.weight
    head.data = r.uniform(-0.3, 0.3, size=head.shape).astype(head.dtype)
    x = _t(r.uniform(0.1, 1, size=(16, 16, 16)))
    return max(_check_all(enc, [x], eps, coords=20), _check_module(enc, lambda: enc(x), eps, coords=2))


def run_suite(names=None, eps=SUITE_EPS):
    """{name: max relative error} for the selected (default: all) checks.

    Inputs and parameters are built in float64 as well as the passes.
    """
    names = list(SUITE) if not names else list(names)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(f"unknown gradcheck entries: {', '.join(unknown)}")
    with precision(np.float64):
        return {n: SUITE[n](eps) for n in names}

"""Differentiable layer ops built on :mod:`hsunmix.tensor`.

Layouts are channels-last: images are (H, W, C), spectral volumes are
(D, H, W, C) with the spectral axis as depth.
"""
import math

import numpy as np

from . import kernels
from .tensor import Tensor, _wrap, matmul, mul, tsum, unbroadcast

GELU_COEF = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _common(*arrays):
    dt = np.result_type(*arrays)
    return [np.ascontiguousarray(a, dtype=dt) for a in arrays]


# -- products from the mixing model ---------------------------------------------

def hadamard(a, b):
    """Elementwise product; ``b`` may broadcast along a size-1 trailing axis."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        ok = a.ndim == b.ndim and a.shape[:-1] == b.shape[:-1] and b.shape[-1] == 1
        if not ok:
            raise ValueError(f"hadamard: shapes {a.shape} and {b.shape} do not match")
    return mul(a, b)


def mode3_product(A, M):
    """out[i, j, l] = sum_r A[i, j, r] * M[r, l]."""
    A, M = _wrap(A), _wrap(M)
    if A.ndim != 3 or M.ndim != 2 or A.shape[2] != M.shape[0]:
        raise ValueError(f"mode3_product: cannot contract {A.shape} with {M.shape}")
    return matmul(A, M)


def broadcast_field_mul(B, T):
    """Scale every band of T by the per-pixel scalar field B (H, W, 1)."""
    B, T = _wrap(B), _wrap(T)
    if B.ndim != 3 or B.shape[2] != 1 or B.shape[:2] != T.shape[:2]:
        raise ValueError(f"broadcast_field_mul: field {B.shape} vs cube {T.shape}")
    return mul(B, T)


def linear(x, W, bias=None):
    """Affine map over the last axis: x @ W + bias."""
    x, W = _wrap(x), _wrap(W)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    lead = x.shape[:-1]
    out = matmul(x.reshape(-1, x.shape[-1]), W)
    if bias is not None:
        out = out + bias
    return out.reshape(lead + (W.shape[1],))


# -- convolutions ------------------------------------------------------------

def conv2d(x, kernel, stride=(1, 1), zero_pad=True):
    """Cross-correlation of (H, W, Cin) with a (kh, kw, Cin, Cout) kernel.

    With ``zero_pad`` the padding is (k - 1) // 2 per side.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    H, W, Cin = x.shape
    kh, kw, kc, Cout = kernel.shape
    if kc != Cin:
        raise ValueError(f"conv2d: kernel expects {kc} channels, input has {Cin}")
    if isinstance(stride, int):
        stride = (stride, stride)
    padding = ((kh - 1) // 2, (kw - 1) // 2) if zero_pad else (0, 0)
    if kh > H + 2 * padding[0] or kw > W + 2 * padding[1]:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    xd, kd = _common(x.data, kernel.data)
    cols = kernels.im2col(xd, kh, kw, stride, padding)
    Ho, Wo = cols.shape[:2]
    cmat = cols.reshape(Ho * Wo, -1)
    kmat = kd.reshape(-1, Cout)
    out = (cmat @ kmat).reshape(Ho, Wo, Cout)

    def backward(g):
        gm = g.reshape(Ho * Wo, Cout)
        gk = (cmat.T @ gm).reshape(kernel.shape)
        gcols = np.ascontiguousarray((gm @ kmat.T).reshape(cols.shape))
        gx = kernels.col2im(gcols, x.shape, stride, padding)
        return gx, gk

    return Tensor._from_op(out, (x, kernel), backward, "conv2d")


def depthwise_conv2d(x, kernel):
    """Per-channel 3x3 (or any odd k) zero-padded convolution; kernel (k, k, C)."""
    x, kernel = _wrap(x), _wrap(kernel)
    k = kernel.shape[0]
    p = k // 2
    H, W, C = x.shape
    if kernel.shape != (k, k, C):
        raise ValueError(f"depthwise_conv2d: kernel {kernel.shape} for {C} channels")
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    out = np.zeros(x.shape, dtype=np.result_type(x.data, kernel.data))
    for a in range(k):
        for b in range(k):
            out += xp[a:a + H, b:b + W] * kernel.data[a, b]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        gk = np.empty(kernel.shape, dtype=g.dtype)
        for a in range(k):
            for b in range(k):
                gxp[a:a + H, b:b + W] += g * kernel.data[a, b]
                gk[a, b] = (g * xp[a:a + H, b:b + W]).sum(axis=(0, 1))
        return gxp[p:p + H, p:p + W], gk

    return Tensor._from_op(out, (x, kernel), backward, "depthwise_conv2d")


def _depth_windows(a, kd, count):
    """Read-only (count, kd*C, P) view of overlapping depth windows of a
    contiguous (Dp, C, P) array."""
    s = a.strides
    return np.lib.stride_tricks.as_strided(a, (count, kd * a.shape[1], a.shape[2]),
                                           (s[0], s[1], s[2]), writeable=False)


def conv3d(x, kernel, zero_pad=True):
    """Cross-correlation along depth of (D, H, W, Cin) with (kd, 1, 1, Cin, Cout).

    Only the depth (spectral) axis is convolved; with ``zero_pad`` and an odd
    kd the depth is preserved.  Internally pixels are moved to the innermost
    axis so each output depth is one (Cout, kd*Cin) x (kd*Cin, pixels) GEMM.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    D, H, W, Cin = x.shape
    kd, kh, kw, kc, Cout = kernel.shape
    if (kh, kw) != (1, 1):
        raise ValueError("conv3d: only 1x1 spatial kernel extents are supported")
    if kc != Cin:
        raise ValueError(f"conv3d: kernel expects {kc} channels, input has {Cin}")
    p = (kd - 1) // 2 if zero_pad else 0
    if kd > D + 2 * p:
        raise ValueError(f"conv3d: depth kernel {kd} larger than padded depth {D + 2 * p}")
    xd, kdat = _common(x.data, kernel.data)
    P = H * W
    Do = D + 2 * p - kd + 1
    xt = np.zeros((D + 2 * p, Cin, P), dtype=xd.dtype)
    xt[p:p + D] = xd.reshape(D, P, Cin).transpose(0, 2, 1)
    taps = kdat.reshape(kd, Cin, Cout)
    kmat = np.ascontiguousarray(taps.reshape(kd * Cin, Cout).T)
    windows = _depth_windows(xt, kd, Do)
    out = np.matmul(kmat, windows).transpose(0, 2, 1)

    def backward(g):
        gt = np.ascontiguousarray(g.reshape(Do, P, Cout).transpose(0, 2, 1), dtype=xt.dtype)
        gk = np.matmul(gt, windows.transpose(0, 2, 1)).sum(axis=0).T
        # input grad: correlate the zero-padded upstream grad with the flipped taps
        gp = np.zeros((Do + 2 * (kd - 1), Cout, P), dtype=xt.dtype)
        gp[kd - 1:kd - 1 + Do] = gt
        flipped = np.ascontiguousarray(taps[::-1].transpose(1, 0, 2).reshape(Cin, kd * Cout))
        gx = np.matmul(flipped, _depth_windows(gp[p:], kd, D))
        return gx.transpose(0, 2, 1).reshape(x.shape), gk.reshape(kernel.shape)

    return Tensor._from_op(np.ascontiguousarray(out).reshape(Do, H, W, Cout), (x, kernel),
                           backward, "conv3d")


def maxpool3d(x, window=(2, 1, 1)):
    """Non-overlapping max over depth windows of (D, H, W, C); depth floors."""
    x = _wrap(x)
    if isinstance(window, int):
        window = (window, 1, 1)
    if tuple(window[1:]) != (1, 1):
        raise ValueError("maxpool3d: only (k, 1, 1) windows are supported")
    wd = int(window[0])
    D = x.shape[0]
    if D < wd:
        raise ValueError(f"maxpool3d: depth {D} smaller than window {wd}")
    rest = x.shape[1:]
    flat = np.ascontiguousarray(x.data.reshape(D, -1))
    out, arg = kernels.maxpool_depth(flat, wd)
    Do = out.shape[0]

    def backward(g):
        g = np.ascontiguousarray(g.reshape(Do, -1))
        return (kernels.maxpool_depth_backward(g, arg, D).reshape(x.shape),)

    return Tensor._from_op(out.reshape((Do,) + rest), (x,), backward, "maxpool3d")


# -- activations -------------------------------------------------------------

def relu(x):
    x = _wrap(x)
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x, slope=0.01):
    x = _wrap(x)
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def gelu(x):
    """tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = _wrap(x)
    v = x.data
    u = _SQRT_2_OVER_PI * (v + GELU_COEF * (v * v * v))
    t = np.tanh(u)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return Tensor._from_op(out, (x,), backward, "gelu")


def hardtanh(x, lo=-1.0, hi=1.0):
    x = _wrap(x)
    inside = (x.data > lo) & (x.data < hi)
    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "hardtanh")


def sigmoid(x):
    x = _wrap(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "gelu": gelu,
    "hardtanh": hardtanh,
    "sigmoid": sigmoid,
}


def activation(kind, x, **kwargs):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x, **kwargs)


# -- softmax / normalisation ---------------------------------------------------

def softmax(x, axis=-1):
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def scaled_softmax(F, gamma=1.0):
    """Channel softmax of gamma * F; each pixel's output lies on the simplex."""
    if gamma < 1:
        raise ValueError("scaled_softmax: gamma must be >= 1")
    return softmax(mul(F, float(gamma)), axis=-1)


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalise over the last axis, then apply an optional affine map."""
    x = _wrap(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    normed = Tensor._from_op(xhat, (x,), backward, "layer_norm")
    if weight is not None:
        normed = mul(normed, weight)
    if bias is not None:
        normed = normed + bias
    return normed


# -- attention -----------------------------------------------------------------

def swda(Q, K, V, rate=1, window=3):
    """Dilated sliding-window attention for a single head.

    Each query (i, j) attends to keys/values at (i + p*rate, j + q*rate) for
    integer offsets |p|, |q| <= (window - 1) / 2.  Off-map positions are left
    out of the softmax.
    """
    Q, K, V = _wrap(Q), _wrap(K), _wrap(V)
    if not (Q.shape == K.shape == V.shape) or Q.ndim != 3:
        raise ValueError("swda: Q, K, V must share one (H, W, d) shape")
    if window < 1 or window % 2 == 0:
        raise ValueError("swda: window must be odd and >= 1")
    if rate < 1:
        raise ValueError("swda: dilation rate must be >= 1")
    q, k, v = _common(Q.data, K.data, V.data)
    out, attn = kernels.swda_forward(q, k, v, int(rate), int(window))

    def backward(g):
        g = np.ascontiguousarray(g, dtype=q.dtype)
        return kernels.swda_backward(q, k, v, attn, g, int(rate), int(window))

    return Tensor._from_op(out, (Q, K, V), backward, "swda")


def swda_weights(Q, K, rate=1, window=3):
    """Attention weights (H, W, window**2) of :func:`swda`, no gradient."""
    q = np.ascontiguousarray(_wrap(Q).data)
    k = np.ascontiguousarray(_wrap(K).data, dtype=q.dtype)
    return kernels.swda_forward(q, k, k, int(rate), int(window))[1]


def dense_attention(Q, K, V):
    """Full softmax attention; inputs (..., N, d)."""
    Q, K, V = _wrap(Q), _wrap(K), _wrap(V)
    d = Q.shape[-1]
    scores = mul(matmul(Q, K.transpose(tuple(range(K.ndim - 2)) + (K.ndim - 1, K.ndim - 2))),
                 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), V)


# -- resampling ---------------------------------------------------------------

def adaptive_pool_matrix(n_in, n_out):
    """Averaging matrix (n_out, n_in) with adaptive-pool bin edges."""
    P = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def bilinear_matrix(n_in, n_out):
    """Interpolation matrix (n_out, n_in), half-pixel centres, edge clamped."""
    P = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        P[i, lo] += 1.0 - frac
        P[i, hi] += frac
    return P


def spatial_resample(x, rows_map, cols_map):
    """out[i, j, c] = sum_ab rows_map[i, a] cols_map[j, b] x[a, b, c]."""
    x = _wrap(x)
    dt = x.data.dtype
    Ah = np.asarray(rows_map, dtype=dt)
    Aw = np.asarray(cols_map, dtype=dt)
    out = np.einsum("ia,abc->ibc", Ah, x.data)
    out = np.einsum("jb,ibc->ijc", Aw, out)

    def backward(g):
        t = np.einsum("jb,ijc->ibc", Aw, g)
        return (np.einsum("ia,ibc->abc", Ah, t),)

    return Tensor._from_op(out, (x,), backward, "spatial_resample")


def adaptive_avg_pool2d(x, size):
    H, W = x.shape[:2]
    return spatial_resample(x, adaptive_pool_matrix(H, size[0]), adaptive_pool_matrix(W, size[1]))


def bilinear_resize(x, size):
    H, W = x.shape[:2]
    return spatial_resample(x, bilinear_matrix(H, size[0]), bilinear_matrix(W, size[1]))


# -- spectral angle ----------------------------------------------------------

def spectral_angle(Y, Yhat):
    """Per-pixel angle between spectra along the last axis.

    Evaluated as 2 atan2(|u - v|, |u + v|) on the unit spectra u, v, which
    is mathematically arccos of the cosine but stays accurate near 0 and
    gives exactly 0 for identical spectra.
    """
    Y, Yhat = _wrap(Y), _wrap(Yhat)
    if Y.shape != Yhat.shape:
        raise ValueError(f"spectral_angle: shapes {Y.shape} and {Yhat.shape} differ")
    y, yh = Y.data, Yhat.data
    ny = np.sqrt((y * y).sum(axis=-1, keepdims=True))
    nh = np.sqrt((yh * yh).sum(axis=-1, keepdims=True))
    if (ny == 0).any() or (nh == 0).any():
        raise ValueError("spectral_angle: zero-norm spectrum")
    dot = (y * yh).sum(axis=-1, keepdims=True)
    diff, tot = y / ny - yh / nh, y / ny + yh / nh
    ang = 2.0 * np.arctan2(np.sqrt((diff * diff).sum(axis=-1)), np.sqrt((tot * tot).sum(axis=-1)))

    def backward(g):
        g = g[..., None]
        yu, hu = y / ny, yh / nh
        cos = np.clip(dot / (ny * nh), -1.0, 1.0)
        t_h = yu - cos * hu
        t_y = hu - cos * yu
        nt_h = np.sqrt((t_h * t_h).sum(axis=-1, keepdims=True))
        nt_y = np.sqrt((t_y * t_y).sum(axis=-1, keepdims=True))
        gh = -np.divide(t_h, nt_h * nh, out=np.zeros_like(t_h), where=nt_h > 0)
        gy = -np.divide(t_y, nt_y * ny, out=np.zeros_like(t_y), where=nt_y > 0)
        return g * gy, g * gh

    return Tensor._from_op(ang, (Y, Yhat), backward, "spectral_angle")


__all__ = [
    "hadamard", "mode3_product", "broadcast_field_mul", "linear", "conv2d",
    "depthwise_conv2d", "conv3d", "maxpool3d", "relu", "leaky_relu", "gelu",
    "hardtanh", "sigmoid", "activation", "softmax", "scaled_softmax", "layer_norm",
    "swda", "swda_weights", "dense_attention", "adaptive_avg_pool2d", "bilinear_resize",
    "spatial_resample", "spectral_angle", "tsum", "unbroadcast",
]

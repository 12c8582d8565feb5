"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and semantics match the compiled module exactly; only the
floating-point summation order differs, so the two agree to rounding.
"""
import numpy as np


def _window_offsets(rate, window):
    half = window // 2
    return [(p * rate, s * rate) for p in range(-half, half + 1) for s in range(-half, half + 1)]


def _shifted(a, di, dj, pad):
    """View of the zero-padded ``a`` shifted by (di, dj)."""
    H, W = a.shape[0] - 2 * pad, a.shape[1] - 2 * pad
    return a[pad + di:pad + di + H, pad + dj:pad + dj + W]


def swda_forward(q, k, v, rate, window):
    H, W, d = q.shape
    offsets = _window_offsets(rate, window)
    pad = (window // 2) * rate
    kp = np.pad(k, ((pad, pad), (pad, pad), (0, 0)))
    vp = np.pad(v, ((pad, pad), (pad, pad), (0, 0)))
    valid = np.pad(np.ones((H, W), dtype=bool), pad)
    scores = np.empty((H, W, len(offsets)), dtype=np.float64)
    mask = np.empty((H, W, len(offsets)), dtype=bool)
    for n, (di, dj) in enumerate(offsets):
        scores[..., n] = np.einsum("ijc,ijc->ij", q, _shifted(kp, di, dj, pad))
        mask[..., n] = _shifted(valid, di, dj, pad)
    scores /= np.sqrt(d)
    scores[~mask] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    attn = w.astype(q.dtype)
    out = np.zeros_like(q)
    for n, (di, dj) in enumerate(offsets):
        out += attn[..., n:n + 1] * _shifted(vp, di, dj, pad)
    return out, attn


def swda_backward(q, k, v, attn, g, rate, window):
    H, W, d = q.shape
    offsets = _window_offsets(rate, window)
    pad = (window // 2) * rate
    kp = np.pad(k, ((pad, pad), (pad, pad), (0, 0)))
    vp = np.pad(v, ((pad, pad), (pad, pad), (0, 0)))
    gkp = np.zeros_like(kp)
    gvp = np.zeros_like(vp)
    dattn = np.empty_like(attn)
    for n, (di, dj) in enumerate(offsets):
        dattn[..., n] = np.einsum("ijc,ijc->ij", g, _shifted(vp, di, dj, pad))
        _shifted(gvp, di, dj, pad)[...] += attn[..., n:n + 1] * g
    ds = attn * (dattn - (attn * dattn).sum(axis=-1, keepdims=True))
    ds /= np.sqrt(d).astype(q.dtype)
    gq = np.zeros_like(q)
    for n, (di, dj) in enumerate(offsets):
        gq += ds[..., n:n + 1] * _shifted(kp, di, dj, pad)
        _shifted(gkp, di, dj, pad)[...] += ds[..., n:n + 1] * q
    inner = (slice(pad, pad + H), slice(pad, pad + W))
    return gq, np.ascontiguousarray(gkp[inner]), np.ascontiguousarray(gvp[inner])


def im2col(x, kh, kw, stride, pad):
    H, W, C = x.shape
    sh, sw = stride
    ph, pw = pad
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((Ho, Wo, kh, kw, C), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, a, b] = xp[a:a + sh * (Ho - 1) + 1:sh, b:b + sw * (Wo - 1) + 1:sw]
    return cols


def col2im(cols, shape, stride, pad):
    H, W, C = shape
    Ho, Wo, kh, kw, _ = cols.shape
    sh, sw = stride
    ph, pw = pad
    # padded buffer must also hold taps that fall past the bottom/right edge
    xp = np.zeros((max(H + 2 * ph, sh * (Ho - 1) + kh), max(W + 2 * pw, sw * (Wo - 1) + kw), C),
                  dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            xp[a:a + sh * (Ho - 1) + 1:sh, b:b + sw * (Wo - 1) + 1:sw] += cols[:, :, a, b]
    return np.ascontiguousarray(xp[ph:ph + H, pw:pw + W])


def maxpool_depth(x, window):
    D, P = x.shape
    Do = D // window
    blocks = x[:Do * window].reshape(Do, window, P)
    local = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, local[:, None, :], axis=1)[:, 0, :]
    arg = local.astype(np.int64) + (np.arange(Do, dtype=np.int64) * window)[:, None]
    return np.ascontiguousarray(out), arg


def maxpool_depth_backward(g, arg, depth):
    gx = np.zeros((depth, g.shape[1]), dtype=g.dtype)
    np.put_along_axis(gx, arg, g, axis=0)
    return gx

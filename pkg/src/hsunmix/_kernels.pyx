# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the tensor engine.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature; ``hsunmix.kernels`` picks one at import time.  Loops run in a
fixed order so results are bit-reproducible for a given build.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline bint _in(Py_ssize_t i, Py_ssize_t n) nogil:
    return 0 <= i < n


def _swda_forward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                  real[:, :, ::1] out, real[:, :, ::1] attn,
                  int rate, int window):
    cdef Py_ssize_t H = q.shape[0], W = q.shape[1], d = q.shape[2]
    cdef int half = window // 2
    cdef Py_ssize_t i, j, c, ii, jj, n
    cdef int p, s
    cdef double scale = 1.0 / sqrt(<double>d)
    cdef double acc, mx, tot
    with nogil:
        for i in range(H):
            for j in range(W):
                mx = -INFINITY
                n = 0
                for p in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        ii = i + p * rate
                        jj = j + s * rate
                        if _in(ii, H) and _in(jj, W):
                            acc = 0.0
                            for c in range(d):
                                acc = acc + q[i, j, c] * k[ii, jj, c]
                            acc = acc * scale
                            attn[i, j, n] = <real>acc
                            # max over the stored (rounded) scores so the
                            # largest weight is exactly exp(0)
                            if attn[i, j, n] > mx:
                                mx = attn[i, j, n]
                        n += 1
                tot = 0.0
                n = 0
                for p in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        ii = i + p * rate
                        jj = j + s * rate
                        if _in(ii, H) and _in(jj, W):
                            acc = exp(attn[i, j, n] - mx)
                            attn[i, j, n] = <real>acc
                            tot = tot + acc
                        else:
                            attn[i, j, n] = 0
                        n += 1
                for n in range(window * window):
                    attn[i, j, n] = <real>(attn[i, j, n] / tot)
                for c in range(d):
                    out[i, j, c] = 0
                n = 0
                for p in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        ii = i + p * rate
                        jj = j + s * rate
                        if _in(ii, H) and _in(jj, W):
                            for c in range(d):
                                out[i, j, c] = out[i, j, c] + attn[i, j, n] * v[ii, jj, c]
                        n += 1


def swda_forward(q, k, v, int rate, int window):
    """Dilated sliding-window attention for one head.

    Returns ``(out, attn)``; ``attn`` has shape (H, W, window**2) and is 0
    at out-of-bounds window slots.
    """
    H, W, d = q.shape
    out = np.empty_like(q)
    attn = np.empty((H, W, window * window), dtype=q.dtype)
    _swda_forward(q, k, v, out, attn, rate, window)
    return out, attn


def _swda_backward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                   real[:, :, ::1] attn, real[:, :, ::1] g,
                   real[:, :, ::1] gq, real[:, :, ::1] gk, real[:, :, ::1] gv,
                   real[::1] dattn, int rate, int window):
    cdef Py_ssize_t H = q.shape[0], W = q.shape[1], d = q.shape[2]
    cdef int half = window // 2
    cdef Py_ssize_t i, j, c, ii, jj, n
    cdef int p, s
    cdef double scale = 1.0 / sqrt(<double>d)
    cdef double acc, wsum, ds
    with nogil:
        for i in range(H):
            for j in range(W):
                wsum = 0.0
                n = 0
                for p in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        ii = i + p * rate
                        jj = j + s * rate
                        if _in(ii, H) and _in(jj, W):
                            acc = 0.0
                            for c in range(d):
                                acc = acc + g[i, j, c] * v[ii, jj, c]
                                gv[ii, jj, c] = gv[ii, jj, c] + attn[i, j, n] * g[i, j, c]
                            dattn[n] = <real>acc
                            wsum = wsum + attn[i, j, n] * acc
                        n += 1
                n = 0
                for p in range(-half, half + 1):
                    for s in range(-half, half + 1):
                        ii = i + p * rate
                        jj = j + s * rate
                        if _in(ii, H) and _in(jj, W):
                            ds = attn[i, j, n] * (dattn[n] - wsum) * scale
                            for c in range(d):
                                gq[i, j, c] = gq[i, j, c] + ds * k[ii, jj, c]
                                gk[ii, jj, c] = gk[ii, jj, c] + ds * q[i, j, c]
                        n += 1


def swda_backward(q, k, v, attn, g, int rate, int window):
    gq = np.zeros_like(q)
    gk = np.zeros_like(k)
    gv = np.zeros_like(v)
    dattn = np.zeros(window * window, dtype=q.dtype)
    _swda_backward(q, k, v, attn, g, gq, gk, gv, dattn, rate, window)
    return gq, gk, gv


def _im2col(real[:, :, ::1] x, real[:, :, :, :, ::1] cols,
            int sh, int sw, int ph, int pw):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Ho = cols.shape[0], Wo = cols.shape[1]
    cdef Py_ssize_t kh = cols.shape[2], kw = cols.shape[3]
    cdef Py_ssize_t i, j, a, b, c, ii, jj
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                for a in range(kh):
                    ii = i * sh + a - ph
                    for b in range(kw):
                        jj = j * sw + b - pw
                        if _in(ii, H) and _in(jj, W):
                            for c in range(C):
                                cols[i, j, a, b, c] = x[ii, jj, c]
                        else:
                            for c in range(C):
                                cols[i, j, a, b, c] = 0


def im2col(x, int kh, int kw, stride, pad):
    """Unfold (H, W, C) into (Ho, Wo, kh, kw, C) patches with zero padding."""
    H, W, C = x.shape
    sh, sw = stride
    ph, pw = pad
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    cols = np.empty((Ho, Wo, kh, kw, C), dtype=x.dtype)
    _im2col(x, cols, sh, sw, ph, pw)
    return cols


def _col2im(real[:, :, :, :, ::1] cols, real[:, :, ::1] x,
            int sh, int sw, int ph, int pw):
    cdef Py_ssize_t H = x.shape[0], W = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Ho = cols.shape[0], Wo = cols.shape[1]
    cdef Py_ssize_t kh = cols.shape[2], kw = cols.shape[3]
    cdef Py_ssize_t i, j, a, b, c, ii, jj
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                for a in range(kh):
                    ii = i * sh + a - ph
                    if not _in(ii, H):
                        continue
                    for b in range(kw):
                        jj = j * sw + b - pw
                        if _in(jj, W):
                            for c in range(C):
                                x[ii, jj, c] = x[ii, jj, c] + cols[i, j, a, b, c]


def col2im(cols, shape, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patches back into (H, W, C)."""
    x = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, x, stride[0], stride[1], pad[0], pad[1])
    return x


def _maxpool_depth(real[:, ::1] x, real[:, ::1] out, cnp.int64_t[:, ::1] arg, int window):
    cdef Py_ssize_t Do = out.shape[0], P = out.shape[1]
    cdef Py_ssize_t o, p, t, best
    cdef real m
    with nogil:
        for o in range(Do):
            for p in range(P):
                best = o * window
                m = x[best, p]
                for t in range(1, window):
                    if x[o * window + t, p] > m:
                        m = x[o * window + t, p]
                        best = o * window + t
                out[o, p] = m
                arg[o, p] = best


def maxpool_depth(x, int window):
    """Max over non-overlapping depth windows of a (D, P) array.

    Returns ``(out, argmax)``; ties resolve to the lowest depth index.
    """
    D, P = x.shape
    Do = D // window
    out = np.empty((Do, P), dtype=x.dtype)
    arg = np.empty((Do, P), dtype=np.int64)
    _maxpool_depth(x, out, arg, window)
    return out, arg


def _maxpool_depth_backward(real[:, ::1] g, cnp.int64_t[:, ::1] arg, real[:, ::1] gx):
    cdef Py_ssize_t Do = g.shape[0], P = g.shape[1]
    cdef Py_ssize_t o, p
    with nogil:
        for o in range(Do):
            for p in range(P):
                gx[arg[o, p], p] = gx[arg[o, p], p] + g[o, p]


def maxpool_depth_backward(g, arg, int depth):
    gx = np.zeros((depth, g.shape[1]), dtype=g.dtype)
    _maxpool_depth_backward(g, arg, gx)
    return gx

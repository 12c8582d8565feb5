"""Finite-difference verification of tape gradients."""
import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad, precision

DEFAULT_EPS = 1e-3
DEFAULT_TOL = 1e-3


def _scalar(out):
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad_check: f must return a single-element Tensor")
    val = float(out.data.reshape(()))
    if not np.isfinite(val):
        raise NonFiniteError("grad_check: f returned a non-finite value")
    return out, val


def grad_check(f, x, eps=DEFAULT_EPS, coords=None, seed=0):
    """Max relative error between tape and central-difference gradients of f at x.

    ``x`` is perturbed in place (and restored), so it may be a parameter that
    ``f`` closes over.  Both passes run in float64 so that rounding does not
    dominate the difference quotient.  ``coords`` limits the check to that
    many randomly chosen entries.  The relative error uses the denominator
    max(|g|, |g_fd|, 1e-6).
    """
    if not 1e-6 <= eps <= 1e-1:
        raise ValueError("grad_check: eps out of range")
    original = x.data
    saved_grad, saved_flag = x.grad, x.requires_grad
    x.data = original.astype(np.float64)
    x.requires_grad = True
    x.grad = None
    try:
        with precision(np.float64):
            out, _ = _scalar(f(x))
            out.backward()
            analytic = np.zeros_like(x.data) if x.grad is None else np.asarray(x.grad, dtype=np.float64)
            flat = x.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = np.sort(np.random.default_rng(seed).choice(flat.size, coords, replace=False))
            numeric = np.empty(idx.size)
            with no_grad():
                for n, i in enumerate(idx):
                    keep = flat[i]
                    flat[i] = keep + eps
                    fp = _scalar(f(x))[1]
                    flat[i] = keep - eps
                    fm = _scalar(f(x))[1]
                    flat[i] = keep
                    numeric[n] = (fp - fm) / (2 * eps)
    finally:
        x.data = original
        x.grad = saved_grad
        x.requires_grad = saved_flag
    g = analytic.reshape(-1)[idx]
    denom = np.maximum(np.maximum(np.abs(g), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(g - numeric) / denom)) if idx.size else 0.0


def weighted_sum(t, seed=0):
    """Scalar sum(t * w) with fixed random weights; exercises every output."""
    from .tensor import mul, tsum

    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=t.shape)
    return tsum(mul(t, w))

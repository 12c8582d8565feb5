"""Endmember initialisation: vertex component analysis and a deterministic
farthest-point fallback."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import make_rng

METHODS = ("vca", "farthest_point")
# angles below this (radians) count as one direction; arccos of a rounded
# unit cosine is about 1e-8, not 0
_SAME_DIRECTION = 1e-6


@dataclass
class InitConfig:
    method: str = "vca"
    seed: int = 0
    snr_estimate_override: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown init method {self.method!r}; choose from {METHODS}")


def _pixels(Y):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 3:
        Y = Y.reshape(-1, Y.shape[-1])
    if Y.ndim != 2:
        raise ValueError("expected a cube (rows, cols, L) or a pixel matrix (N, L)")
    return Y


def estimate_snr(X, R):
    """VCA's SNR estimate (dB) from the R-dimensional PCA subspace.

    ``X`` is (L, N).  Returns inf when the residual outside the subspace is
    numerically zero.
    """
    L, N = X.shape
    mean = X.mean(axis=1, keepdims=True)
    Xc = X - mean
    U = np.linalg.svd(Xc @ Xc.T / N)[0][:, :R]
    Xp = U.T @ Xc
    p_y = np.sum(X * X) / N
    p_x = np.sum(Xp * Xp) / N + float(mean.ravel() @ mean.ravel())
    denom = p_y - p_x
    num = p_x - (R / L) * p_y
    if denom <= 1e-12 * p_y or num <= 0:
        return math.inf if num > 0 else -math.inf
    return 10.0 * math.log10(num / denom)


def vca(Y, R, seed=0, snr_db=None):
    """Vertex component analysis.

    Pixels are projected onto an R-dimensional subspace (projective
    projection above 15 + 10 log10(R) dB estimated SNR, mean-removed
    (R-1)-dimensional PCA plus a constant coordinate otherwise).  R random
    directions, each orthogonal to the endmembers already found, pick the
    pixel with the largest absolute projection.  Returns the selected pixel
    spectra clamped at zero, in selection order.  With R = 1 the pixel of
    largest norm is returned.
    """
    X = _pixels(Y).T  # (L, N)
    L, N = X.shape
    if R < 1 or R > min(L, N):
        raise ValueError(f"vca: need 1 <= R <= min(L, pixels) = {min(L, N)}")
    if R == 1:
        # a single vertex: the projection step degenerates, and the pixel
        # with the largest norm is the natural representative
        return np.maximum(X[:, [int(np.argmax((X * X).sum(axis=0)))]].T, 0).astype(np.float32)
    rng = make_rng(seed)
    snr = estimate_snr(X, R) if snr_db is None else snr_db
    threshold = 15.0 + 10.0 * math.log10(R)

    if snr > threshold:
        Ud = np.linalg.svd(X @ X.T / N)[0][:, :R]
        Xd = Ud.T @ X
        u = Xd.mean(axis=1, keepdims=True)
        scale = (Xd * u).sum(axis=0, keepdims=True)
        if (np.abs(scale) < 1e-12).any():
            raise ValueError("vca: pixel orthogonal to the mean direction")
        Yp = Xd / scale
    else:
        mean = X.mean(axis=1, keepdims=True)
        Xc = X - mean
        Ud = np.linalg.svd(Xc @ Xc.T / N)[0][:, :R - 1]
        Xd = Ud.T @ Xc
        c = np.sqrt((Xd * Xd).sum(axis=0)).max() if R > 1 else 1.0
        Yp = np.vstack([Xd, np.full((1, N), c)])

    if np.linalg.matrix_rank(Yp, tol=1e-9 * np.abs(Yp).max()) < R:
        raise ValueError(f"vca: fewer than {R} linearly independent pixels")

    E = np.zeros((R, R))
    E[R - 1, 0] = 1.0
    idx = np.zeros(R, dtype=np.int64)
    for i in range(R):
        w = rng.standard_normal(R)
        f = w - E @ np.linalg.pinv(E) @ w
        f /= np.linalg.norm(f)
        v = np.abs(f @ Yp)
        idx[i] = int(np.argmax(v))
        E[:, i] = Yp[:, idx[i]]
    return np.maximum(X[:, idx].T, 0).astype(np.float32)


def farthest_point_init(Y, R):
    """Greedy selection: the largest-norm pixel, then repeatedly the pixel
    whose smallest spectral angle to the chosen set is largest.  Ties go to
    the lowest pixel index."""
    X = _pixels(Y)
    N = X.shape[0]
    if R < 1 or R > N:
        raise ValueError(f"farthest_point_init: need 1 <= R <= {N}")
    norms = np.linalg.norm(X, axis=1)
    if norms.max() == 0:
        raise ValueError("farthest_point_init: all pixels are zero")
    U = np.divide(X, norms[:, None], out=np.zeros_like(X), where=norms[:, None] > 0)
    chosen = [int(np.argmax(norms))]
    min_ang = np.full(N, np.inf)
    for _ in range(1, R):
        cos = np.clip(U @ U[chosen[-1]], -1.0, 1.0)
        min_ang = np.minimum(min_ang, np.arccos(cos))
        min_ang[norms == 0] = -1.0
        nxt = int(np.argmax(min_ang))
        if min_ang[nxt] <= _SAME_DIRECTION:
            raise ValueError("farthest_point_init: fewer than R distinct spectral directions")
        chosen.append(nxt)
    return np.maximum(X[chosen], 0).astype(np.float32)


def init_endmembers(Y, R, cfg=None):
    cfg = cfg or InitConfig()
    if cfg.method == "vca":
        return vca(Y, R, seed=cfg.seed, snr_db=cfg.snr_estimate_override)
    return farthest_point_init(Y, R)

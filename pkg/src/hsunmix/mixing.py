"""Forward mixing models (LMM, GBM, PPNMM) and synthetic scene generation.

Arrays follow the unmixing conventions used throughout the package:

* endmembers ``M``: (R, L), one spectrum per row
* abundances ``A``: (rows, cols, R), nonnegative and summing to one per pixel
* nonlinear field ``B``: (rows, cols, 1)
* cubes ``Y``: (rows, cols, L)
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import make_rng, split

ASC_TOL = 1e-5
B_RANGE = (-0.3, 0.3)
MODELS = ("lmm", "gbm", "ppnmm")


class ConstraintError(ValueError):
    """Abundances violate nonnegativity or sum-to-one."""


def check_abundances(a, atol=ASC_TOL):
    a = np.asarray(a)
    if (a < -atol).any():
        raise ConstraintError("abundances must be nonnegative")
    if np.abs(a.sum(axis=-1) - 1.0).max(initial=0.0) > atol:
        raise ConstraintError("abundances must sum to one per pixel")
    return a


def _as_float(x):
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float32)


# -- pixel models ------------------------------------------------------------

def lmm_pixel(M, a):
    """Noiseless linear mixture M^T a."""
    M, a = _as_float(M), check_abundances(_as_float(a))
    return a @ M


def ppnmm_pixel(M, a, b):
    """Polynomial post-nonlinear mixture: y = M^T a + b (M^T a) * (M^T a)."""
    y = lmm_pixel(M, a)
    return y + b * y * y


def pair_indices(R):
    """(i, j) with i < j, in the storage order of GBM coefficients."""
    return [(i, j) for i in range(R) for j in range(i + 1, R)]


def gbm_pixel(M, a, beta):
    """Generalized bilinear mixture with pairwise coefficients beta_ij, i < j."""
    M = _as_float(M)
    a = check_abundances(_as_float(a))
    beta = np.asarray(beta, dtype=M.dtype)
    pairs = pair_indices(M.shape[0])
    if beta.shape != (len(pairs),):
        raise ValueError(f"gbm_pixel: expected {len(pairs)} coefficients, got {beta.shape}")
    if (beta < 0).any() or (beta > 1).any():
        raise ValueError("gbm_pixel: beta must lie in [0, 1]")
    y = a @ M
    for (i, j), bij in zip(pairs, beta):
        y = y + bij * a[i] * a[j] * (M[i] * M[j])
    return y


# -- image models ------------------------------------------------------------

def _check_image_shapes(A, M, B=None):
    if A.ndim != 3 or M.ndim != 2 or A.shape[2] != M.shape[0]:
        raise ValueError(f"abundances {A.shape} do not match endmembers {M.shape}")
    if B is not None and B.shape != A.shape[:2] + (1,):
        raise ValueError(f"nonlinear field {B.shape} does not match image {A.shape[:2]}")


def lmm_image(A, M):
    A, M = _as_float(A), _as_float(M)
    _check_image_shapes(A, M)
    return A @ M


def ppnmm_image(A, M, B):
    """Y = A x3 M + B * (A x3 M) * (A x3 M), B broadcast over bands."""
    A, M, B = _as_float(A), _as_float(M), _as_float(B)
    _check_image_shapes(A, M, B)
    lin = A @ M
    return lin + B * lin * lin


def gbm_image(A, M, beta):
    A, M = _as_float(A), _as_float(M)
    _check_image_shapes(A, M)
    pairs = pair_indices(M.shape[0])
    beta = np.asarray(beta, dtype=A.dtype)
    if beta.shape != A.shape[:2] + (len(pairs),):
        raise ValueError(f"gbm_image: beta {beta.shape} for {len(pairs)} pairs")
    Y = A @ M
    for n, (i, j) in enumerate(pairs):
        Y = Y + (beta[..., n] * A[..., i] * A[..., j])[..., None] * (M[i] * M[j])
    return Y


# -- synthetic scenes --------------------------------------------------------

def gaussian_random_field(rows, cols, smoothness, rng):
    """Standardised 2-D field from white noise with a 1/|f|^smoothness filter."""
    white = rng.standard_normal((rows, cols))
    fy = np.fft.fftfreq(rows)[:, None]
    fx = np.fft.fftfreq(cols)[None, :]
    f = np.sqrt(fy * fy + fx * fx)
    filt = np.zeros_like(f)
    nz = f > 0
    filt[nz] = f[nz] ** (-smoothness)
    field = np.fft.ifft2(np.fft.fft2(white) * filt).real
    field -= field.mean()
    sd = field.std()
    return field / sd if sd > 0 else field


def gen_abundance_field(rows, cols, R, smoothness=2.0, seed=0, contrast=4.0):
    """Piecewise-smooth abundances: R Gaussian random fields through a softmax.

    ``contrast`` scales the standardised fields before the softmax; larger
    values give more nearly pure pixels.
    """
    if R < 2:
        raise ValueError("gen_abundance_field: need R >= 2")
    rngs = split(seed, R)
    fields = np.stack([gaussian_random_field(rows, cols, smoothness, g) for g in rngs], axis=-1)
    z = contrast * fields
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    A = e / e.sum(axis=-1, keepdims=True)
    return A.astype(np.float32)


def total_variation(A):
    """Mean absolute difference between 4-neighbours, averaged over channels."""
    A = np.asarray(A, dtype=np.float64)
    dv = np.abs(np.diff(A, axis=0)).mean()
    dh = np.abs(np.diff(A, axis=1)).mean()
    return 0.5 * (dv + dh)


def spectral_angle(u, v):
    """Angle in radians between two spectra.

    Uses 2 atan2(|u/|u| - v/|v||, |u/|u| + v/|v||), which is accurate for
    small angles and exactly 0 for identical spectra.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("spectral_angle: zero-norm spectrum")
    a, b = u / nu, v / nv
    return float(2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def gen_endmembers(R, L, seed=0, min_angle=0.1, max_draws=1000):
    """Smooth synthetic spectra: sums of 3-6 Gaussian bumps, scaled into (0, 1].

    Candidates closer than ``min_angle`` radians to an accepted spectrum are
    redrawn.
    """
    if R > L:
        raise ValueError("gen_endmembers: need R <= L")
    rng = make_rng(seed)
    x = np.linspace(0.0, 1.0, L)
    accepted = []
    for _ in range(max_draws):
        n = int(rng.integers(3, 7))
        centers = rng.uniform(0.0, 1.0, n)
        widths = rng.uniform(0.03, 0.25, n)
        amps = rng.uniform(0.2, 1.0, n)
        s = 0.05 + (amps * np.exp(-0.5 * ((x[:, None] - centers) / widths) ** 2)).sum(axis=1)
        s /= s.max()
        if all(spectral_angle(s, t) >= min_angle for t in accepted):
            accepted.append(s)
            if len(accepted) == R:
                return np.stack(accepted).astype(np.float32)
    raise RuntimeError(f"gen_endmembers: no {R} spectra {min_angle} rad apart after {max_draws} draws")


def check_endmembers(M):
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError("endmember matrix must be 2-D (R, L)")
    if (M < 0).any():
        raise ValueError("endmember entries must be nonnegative")
    if (~M.any(axis=1)).any():
        raise ValueError("endmember rows must not be identically zero")
    return M


def load_endmembers(path):
    """Read a header-free R x L CSV of nonnegative reflectances."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise ValueError(f"{path}: empty endmember file")
    M = np.array(rows, dtype=np.float32)
    if not np.isfinite(M).all():
        raise ValueError(f"{path}: non-finite entry")
    return check_endmembers(M)


def save_endmembers(path, M):
    M = np.asarray(M, dtype=np.float32)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite, or +inf for a clean cube")


def add_noise_snr(Y, spec):
    """Add i.i.d. Gaussian noise with variance mean(Y^2) * 10^(-snr/10).

    ``snr_db = inf`` returns the cube unchanged.
    """
    Y = np.asarray(Y)
    if not np.isfinite(Y).all():
        raise ValueError("add_noise_snr: cube has non-finite values")
    if math.isinf(spec.snr_db):
        return Y.copy()
    rng = make_rng(spec.seed)
    power = float(np.mean(np.square(Y, dtype=np.float64)))
    sigma = math.sqrt(power * 10.0 ** (-spec.snr_db / 10.0))
    noise = rng.standard_normal(Y.shape) * sigma
    return (Y + noise).astype(Y.dtype)


def measured_snr(clean, noisy):
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * math.log10(np.mean(clean * clean) / np.mean(noise * noise))


@dataclass
class SyntheticDataset:
    model: str
    cube: np.ndarray
    clean: np.ndarray
    abundances: np.ndarray
    endmembers: np.ndarray
    bfield: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    snr_db: float = math.inf
    seed: int = 0


def gen_dataset(model, rows, cols, R, L, snr_db=math.inf, seed=0, smoothness=2.0, contrast=4.0):
    """Synthetic scene with ground truth under the LMM, GBM or PPNMM.

    b ~ U[-0.3, 0.3] per pixel for PPNMM; beta_ij ~ U[0, 1] per pixel and
    pair for GBM.  Noise is added last at ``snr_db`` (inf: none).
    """
    if model not in MODELS:
        raise ValueError(f"unknown mixing model {model!r}; choose from {MODELS}")
    if min(rows, cols, R, L) < 1:
        raise ValueError("dataset extents must be positive")
    ss = np.random.SeedSequence(seed)
    s_end, s_abund, s_coef, s_noise = ss.spawn(4)
    M = gen_endmembers(R, L, seed=s_end)
    A = gen_abundance_field(rows, cols, R, smoothness=smoothness, seed=s_abund, contrast=contrast)
    coef_rng = make_rng(s_coef)
    B = beta = None
    if model == "lmm":
        clean = lmm_image(A, M)
    elif model == "ppnmm":
        B = coef_rng.uniform(*B_RANGE, size=(rows, cols, 1)).astype(np.float32)
        clean = ppnmm_image(A, M, B)
    else:
        beta = coef_rng.uniform(0.0, 1.0, size=(rows, cols, R * (R - 1) // 2)).astype(np.float32)
        clean = gbm_image(A, M, beta)
    cube = add_noise_snr(clean, NoiseSpec(snr_db, s_noise))
    return SyntheticDataset(model, cube, clean, A, M, B, beta, snr_db, seed)

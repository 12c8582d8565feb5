import numpy as np
import pytest

from hsunmix.endmembers import InitConfig, estimate_snr, farthest_point_init, init_endmembers, vca
from hsunmix.metrics import match_endmembers, sad_end
from hsunmix.mixing import gen_abundance_field, gen_endmembers, lmm_image


def pure_pixel_cube(R, L=30, seed=0, rows=12, cols=12):
    """Noiseless LMM cube with one pure pixel per endmember planted in it."""
    M = gen_endmembers(R, L, seed=seed)
    A = gen_abundance_field(rows, cols, R, seed=seed + 100)
    for r in range(R):
        A[r, r] = 0
        A[r, r, r] = 1
    return lmm_image(A, M), M


class TestVCA:
    @pytest.mark.parametrize("seed", range(10))
    def test_pure_pixel_recovery(self, seed):
        Y, M = pure_pixel_cube(4, seed=seed)
        est = vca(Y, 4, seed=seed)
        assert sad_end(est, M, match_endmembers(est, M)) < 0.01

    def test_r3_recovers_the_set(self):
        Y, M = pure_pixel_cube(3, seed=11)
        est = vca(Y, 3, seed=0)
        perm = match_endmembers(est, M)
        assert sad_end(est, M, perm) < 1e-3

    def test_deterministic(self):
        Y, _ = pure_pixel_cube(3, seed=2)
        assert (vca(Y, 3, seed=5) == vca(Y, 3, seed=5)).all()

    def test_r1_is_max_norm_pixel(self):
        Y, _ = pure_pixel_cube(3, seed=4)
        X = Y.reshape(-1, Y.shape[-1])
        best = max(range(len(X)), key=lambda n: float(np.dot(X[n].astype(np.float64), X[n])))
        assert (vca(Y, 1, seed=0)[0] == X[best]).all()

    def test_low_snr_branch_and_rank_error(self):
        Y, M = pure_pixel_cube(3, seed=6)
        est = vca(Y, 3, seed=0, snr_db=0.0)
        assert sad_end(est, M, match_endmembers(est, M)) < 0.01
        flat = np.tile(M[0], (5, 5, 1))
        with pytest.raises(ValueError):
            vca(flat, 3)
        with pytest.raises(ValueError):
            vca(Y, 31)

    def test_snr_estimate_orders_noise_levels(self, rng):
        Y, _ = pure_pixel_cube(3, seed=1)
        X = Y.reshape(-1, Y.shape[-1]).T
        lo = estimate_snr(X + rng.normal(scale=0.05, size=X.shape), 3)
        hi = estimate_snr(X + rng.normal(scale=0.005, size=X.shape), 3)
        assert hi > lo


class TestFarthestPoint:
    def test_three_repeated_pure_pixels(self):
        M = gen_endmembers(3, 10, seed=0)
        Y = np.stack([M[i % 3] for i in range(12)]).reshape(3, 4, 10)
        est = farthest_point_init(Y, 3)
        assert sorted(map(tuple, est)) == sorted(map(tuple, M))
        assert sad_end(est, M, match_endmembers(est, M)) == 0.0

    def test_r1_is_max_norm_pixel(self, rng):
        X = rng.uniform(size=(20, 6)).astype(np.float32)
        assert (farthest_point_init(X, 1)[0] == X[np.argmax(np.linalg.norm(X, axis=1))]).all()

    def test_degenerate(self):
        with pytest.raises(ValueError):
            farthest_point_init(np.ones((4, 4, 5)), 2)
        with pytest.raises(ValueError):
            farthest_point_init(np.zeros((4, 4, 5)), 1)


def test_init_dispatch_and_nonnegativity(rng):
    Y = rng.normal(0.5, 0.3, size=(6, 6, 8)).astype(np.float32)
    for method in ("vca", "farthest_point"):
        assert init_endmembers(Y, 3, InitConfig(method=method)).min() >= 0
    with pytest.raises(ValueError):
        InitConfig(method="nfindr")

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsunmix.metrics import (EvalReport, align, assignment_cost, b_histogram, evaluate, histogram_csv,
                             match_endmembers, rmse_abun, rmse_b, sad_end, sad_matrix)
from hsunmix.mixing import gen_abundance_field, gen_endmembers


def brute_force_best(M_hat, M_true):
    """Lowest total SAD over every bijection, scored pair by pair."""
    R = len(M_true)
    best = math.inf
    for p in itertools.permutations(range(R)):
        total = 0.0
        for s in range(R):
            u, v = M_true[p[s]], M_hat[s]
            c = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
            total += math.acos(min(1.0, max(-1.0, c)))
        best = min(best, total)
    return best


class TestMatching:
    def test_recovers_a_planted_permutation(self):
        M = gen_endmembers(4, 20, seed=1)
        perm = np.array([2, 0, 3, 1])
        M_hat = np.empty_like(M)
        M_hat[np.arange(4)] = M[perm]  # estimate s is true endmember perm[s]
        found = match_endmembers(M_hat, M)
        assert found.tolist() == perm.tolist()
        assert assignment_cost(M_hat, M, found) == 0.0
        assert (M_hat[align(found)] == M).all()

    def test_crossed_pair_swaps(self):
        M = np.array([[1.0, 0.1], [0.1, 1.0]])
        M_hat = np.array([[0.2, 1.0], [1.0, 0.3]])
        straight = assignment_cost(M_hat, M, [0, 1])
        crossed = assignment_cost(M_hat, M, [1, 0])
        assert crossed < straight
        assert match_endmembers(M_hat, M).tolist() == [1, 0]

    def test_identical_rows_break_ties_on_first_index(self):
        M = np.tile([0.3, 0.5, 0.9], (3, 1))
        assert match_endmembers(M * 2, M).tolist() == [0, 1, 2]

    @pytest.mark.parametrize("R", range(1, 7))
    def test_exhaustive_oracle(self, R):
        rng = np.random.default_rng(R)
        for _ in range(5):
            M = rng.uniform(0.05, 1, size=(R, 9))
            M_hat = rng.uniform(0.05, 1, size=(R, 9))
            perm = match_endmembers(M_hat, M)
            assert assignment_cost(M_hat, M, perm) == pytest.approx(brute_force_best(M_hat, M), abs=1e-12)

    def test_large_r_uses_assignment_solver(self):
        rng = np.random.default_rng(3)
        M = rng.uniform(0.05, 1, size=(12, 30))
        order = rng.permutation(12)
        M_hat = M[order] * 1.7
        perm = match_endmembers(M_hat, M)
        assert perm.tolist() == order.tolist()

    def test_errors(self):
        with pytest.raises(ValueError):
            match_endmembers(np.ones((3, 4)), np.ones((2, 4)))
        with pytest.raises(ValueError):
            align([0, 0, 1])

    def test_sad_matrix_orientation(self):
        M = np.array([[1.0, 0.0], [0.0, 1.0]])
        M_hat = np.array([[1.0, 1.0], [0.0, 1.0]])
        cost = sad_matrix(M_hat, M)
        assert cost[0, 0] == pytest.approx(math.pi / 4) and cost[1, 1] == 0.0
        assert cost[0, 1] == pytest.approx(math.pi / 2)


class TestRmseAbun:
    def test_examples(self, rng):
        A = rng.dirichlet(np.ones(3), size=(4, 5))
        assert rmse_abun(A, A) == 0.0
        assert rmse_abun(A + 0.1, A) == pytest.approx(0.1)

    def test_uses_the_endmember_permutation(self, rng):
        A = rng.dirichlet(np.ones(3), size=(4, 5))
        perm = np.array([1, 2, 0])
        A_hat = np.empty_like(A)
        A_hat[..., np.arange(3)] = A[..., perm]
        assert rmse_abun(A_hat, A, perm) == 0.0
        assert rmse_abun(A_hat, A) > 0

    @given(st.permutations(range(4)), st.integers(0, 2**31))
    def test_invariant_to_a_shared_channel_permutation(self, order, seed):
        r = np.random.default_rng(seed)
        A, B = r.dirichlet(np.ones(4), size=(3, 3)), r.dirichlet(np.ones(4), size=(3, 3))
        order = list(order)
        assert rmse_abun(A[..., order], B[..., order]) == pytest.approx(rmse_abun(A, B), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse_abun(np.ones((2, 2, 3)), np.ones((2, 3, 3)))


class TestSadEnd:
    def test_examples(self):
        M = gen_endmembers(3, 16, seed=0)
        assert sad_end(M, M) == 0.0
        assert sad_end(2 * M, M) == 0.0  # exact scaling
        assert sad_end(2.5 * M, M) == pytest.approx(0.0, abs=1e-7)
        assert sad_end(M, M, [0, 1, 2]) == 0.0

    def test_value_against_arccos(self):
        M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        M_hat = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        assert sad_end(M_hat, M) == pytest.approx((math.pi / 4) / 2)

    def test_zero_row(self):
        with pytest.raises(ValueError):
            sad_end(np.zeros((2, 3)), np.ones((2, 3)))


class TestRmseB:
    def test_examples(self, rng):
        B = rng.uniform(-0.3, 0.3, size=(5, 5))
        assert rmse_b(B, B) == 0.0
        with pytest.raises(ValueError):
            rmse_b(B, B[:4])

    def test_zero_prediction_baseline_is_the_uniform_std(self):
        B = np.random.default_rng(0).uniform(-0.3, 0.3, size=10**6)
        assert rmse_b(np.zeros_like(B), B) == pytest.approx(0.6 / math.sqrt(12), rel=2e-3)


class TestHistogram:
    def test_constant_field_fills_one_bin(self):
        centers, counts = b_histogram(np.full((4, 4), 0.2), bins=5)
        assert len(centers) == 5 and counts.sum() == 16 and (counts > 0).sum() == 1

    def test_counts_sum_and_edges(self, rng):
        B = rng.normal(size=(7, 9))
        centers, counts = b_histogram(B, bins=8)
        assert counts.sum() == 63
        width = (B.max() - B.min()) / 8
        assert centers[0] == pytest.approx(B.min() + width / 2)
        assert centers[-1] == pytest.approx(B.max() - width / 2)

    def test_uniform_sample_within_three_sigma(self):
        B = np.random.default_rng(4).uniform(-0.3, 0.3, size=10**4)
        _, counts = b_histogram(B, bins=10)
        sigma = math.sqrt(10**4 * 0.1 * 0.9)
        assert (np.abs(counts - 1000) <= 3 * sigma).all()

    def test_rejects_zero_bins_and_writes_csv(self):
        with pytest.raises(ValueError):
            b_histogram(np.ones(3), bins=0)
        text = histogram_csv(np.array([0.5, 1.5]), np.array([3, 4]))
        assert text == "bin_center,count\n0.5,3\n1.5,4\n"


class TestEvaluate:
    def test_ground_truth_scores_zero(self):
        M = gen_endmembers(3, 12, seed=2)
        A = gen_abundance_field(6, 6, 3, seed=2)
        B = np.random.default_rng(0).uniform(-0.3, 0.3, size=(6, 6))
        rep = evaluate(A, M, A, M, B, B)
        assert (rep.rmse_abun, rep.sad_end, rep.rmse_b) == (0.0, 0.0, 0.0)
        assert rep.permutation == [0, 1, 2]

    def test_permuted_estimate_is_aligned_before_scoring(self):
        M = gen_endmembers(3, 12, seed=5)
        A = gen_abundance_field(6, 6, 3, seed=5)
        order = [2, 0, 1]
        rep = evaluate(A[..., order], M[order], A, M)
        assert rep.permutation == order and rep.rmse_abun == 0.0 and rep.sad_end == 0.0

    def test_json_roundtrip_and_optional_rmse_b(self):
        rep = EvalReport(rmse_abun=0.1, sad_end=0.2, permutation=[1, 0])
        d = json.loads(rep.to_json())
        assert "rmse_b" not in d and d["permutation"] == [1, 0]
        assert EvalReport.from_json(rep.to_json()) == rep
        full = EvalReport(0.1, 0.2, [0], rmse_b=0.05)
        assert json.loads(full.to_json())["rmse_b"] == 0.05

    def test_r_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(np.ones((2, 2, 3)), np.ones((3, 4)), np.ones((2, 2, 2)), np.ones((2, 4)))

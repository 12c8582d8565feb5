"""Core tensor ops checked against explicit loop oracles."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsunmix import ops
from hsunmix.gradcheck import grad_check, weighted_sum
from hsunmix.tensor import NonFiniteError, Tensor, concat, no_grad, precision, tsum


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


# -- loop oracles ---------------------------------------------------------------

def conv2d_loop(x, k, stride, pad):
    H, W, Cin = x.shape
    kh, kw, _, Cout = k.shape
    xp = np.pad(x, ((pad[0], pad[0]), (pad[1], pad[1]), (0, 0)))
    Ho = (H + 2 * pad[0] - kh) // stride[0] + 1
    Wo = (W + 2 * pad[1] - kw) // stride[1] + 1
    out = np.zeros((Ho, Wo, Cout))
    for i in range(Ho):
        for j in range(Wo):
            for o in range(Cout):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for c in range(Cin):
                            acc += xp[i * stride[0] + a, j * stride[1] + b, c] * k[a, b, c, o]
                out[i, j, o] = acc
    return out


def conv3d_loop(x, k):
    D, H, W, Cin = x.shape
    kd, _, _, _, Cout = k.shape
    p = (kd - 1) // 2
    out = np.zeros((D, H, W, Cout))
    for z in range(D):
        for t in range(kd):
            src = z + t - p
            if 0 <= src < D:
                out[z] += x[src] @ k[t, 0, 0]
    return out


# -- hadamard / mode-3 / field broadcast ------------------------------------------

class TestProducts:
    def test_hadamard_identity(self):
        assert ops.hadamard(T([1, 2, 3]), T([1, 1, 1])).numpy().tolist() == [1, 2, 3]

    def test_hadamard_hand_values(self):
        out = ops.hadamard(T([0.2, 0.4]), T([0.2, 0.4])).numpy()
        np.testing.assert_allclose(out, [0.04, 0.16], rtol=1e-6)

    def test_hadamard_zero(self):
        assert not ops.hadamard(T(np.ones((2, 3))), T(np.zeros((2, 3)))).numpy().any()

    def test_hadamard_trailing_broadcast_and_mismatch(self):
        out = ops.hadamard(T(np.ones((2, 2, 3))), T(np.full((2, 2, 1), 2.0)))
        assert (out.numpy() == 2).all()
        with pytest.raises(ValueError):
            ops.hadamard(T(np.ones((2, 3))), T(np.ones((3, 2))))

    def test_mode3_hand_example(self):
        A = T([[[0.3, 0.7]]])
        M = T([[1, 0, 1], [0, 1, 1]])
        np.testing.assert_allclose(ops.mode3_product(A, M).numpy(), [[[0.3, 0.7, 1.0]]], rtol=1e-6)

    def test_mode3_selection_and_zero(self, rng):
        M = rng.uniform(size=(2, 5)).astype(np.float32)
        A = np.zeros((3, 3, 2), dtype=np.float32)
        assert not ops.mode3_product(T(A), T(M)).numpy().any()
        A[..., 0] = 1
        assert (ops.mode3_product(T(A), T(M)).numpy() == M[0]).all()

    def test_mode3_mismatch(self):
        with pytest.raises(ValueError):
            ops.mode3_product(T(np.ones((2, 2, 3))), T(np.ones((2, 4))))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
    def test_integer_products_match_triple_loop_exactly(self, rows, cols, R, L, seed):
        r = np.random.default_rng(seed)
        A = r.integers(-5, 6, size=(rows, cols, R)).astype(np.float32)
        M = r.integers(-5, 6, size=(R, L)).astype(np.float32)
        B = r.integers(-5, 6, size=(rows, cols, 1)).astype(np.float32)
        oracle = np.zeros((rows, cols, L), dtype=np.float32)
        for i in range(rows):
            for j in range(cols):
                for l in range(L):
                    oracle[i, j, l] = sum(A[i, j, k] * M[k, l] for k in range(R))
        assert (ops.mode3_product(T(A), T(M)).numpy() == oracle).all()
        field = np.array([[[B[i, j, 0] * oracle[i, j, l] for l in range(L)] for j in range(cols)]
                          for i in range(rows)], dtype=np.float32)
        assert (ops.broadcast_field_mul(T(B), T(oracle)).numpy() == field).all()
        assert (ops.hadamard(T(oracle), T(oracle)).numpy() == oracle * oracle).all()

    def test_broadcast_field_cases(self, rng):
        Tc = rng.uniform(size=(2, 2, 4)).astype(np.float32)
        assert (ops.broadcast_field_mul(T(np.ones((2, 2, 1))), T(Tc)).numpy() == Tc).all()
        assert not ops.broadcast_field_mul(T(np.zeros((2, 2, 1))), T(Tc)).numpy().any()
        out = ops.broadcast_field_mul(T([[[0.5]]]), T([[[0.2, 0.4]]])).numpy()
        np.testing.assert_allclose(out, [[[0.1, 0.2]]], rtol=1e-6)
        with pytest.raises(ValueError):
            ops.broadcast_field_mul(T(np.ones((3, 2, 1))), T(Tc))


# -- convolution ---------------------------------------------------------------------

class TestConv:
    def test_conv2d_channel_sum(self, rng, backend):
        x = rng.uniform(size=(4, 4, 2)).astype(np.float32)
        k = np.ones((1, 1, 2, 1), dtype=np.float32)
        out = ops.conv2d(T(x), T(k)).numpy()
        np.testing.assert_allclose(out[..., 0], x.sum(-1), rtol=1e-6)

    def test_conv2d_delta_is_identity_bit_for_bit(self, rng, backend):
        x = rng.normal(size=(5, 6, 3)).astype(np.float32)
        k = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            k[1, 1, c, c] = 1
        assert (ops.conv2d(T(x), T(k)).numpy() == x).all()

    def test_conv2d_stride_shape(self, backend):
        out = ops.conv2d(T(np.ones((8, 8, 1))), T(np.ones((3, 3, 1, 2))), stride=(2, 2))
        assert out.shape == (4, 4, 2)

    @pytest.mark.parametrize("stride,pad", [((1, 1), True), ((2, 2), True), ((1, 2), False)])
    def test_conv2d_matches_loop(self, rng, backend, stride, pad):
        x = rng.normal(size=(5, 7, 2))
        k = rng.normal(size=(3, 3, 2, 3))
        out = ops.conv2d(T(x), T(k), stride=stride, zero_pad=pad).numpy()
        ref = conv2d_loop(x, k, stride, (1, 1) if pad else (0, 0))
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)

    def test_conv2d_kernel_too_large(self):
        with pytest.raises(ValueError):
            ops.conv2d(T(np.ones((2, 2, 1))), T(np.ones((5, 5, 1, 1))), zero_pad=False)

    def test_conv3d_identity_and_average(self):
        x = np.arange(8, dtype=np.float32).reshape(8, 1, 1, 1)
        assert (ops.conv3d(T(x), T(np.ones((1, 1, 1, 1, 1)))).numpy() == x).all()
        seq = np.array([0, 3, 0], dtype=np.float32).reshape(3, 1, 1, 1)
        avg = np.full((3, 1, 1, 1, 1), 1 / 3, dtype=np.float32)
        np.testing.assert_allclose(ops.conv3d(T(seq), T(avg)).numpy()[1, 0, 0, 0], 1.0, rtol=1e-6)

    def test_conv3d_preserves_depth(self):
        assert ops.conv3d(T(np.ones((8, 2, 2, 1))), T(np.ones((3, 1, 1, 1, 4)))).shape == (8, 2, 2, 4)

    @pytest.mark.parametrize("kd", [1, 3, 5])
    def test_conv3d_matches_loop(self, rng, kd):
        x = rng.normal(size=(7, 2, 3, 2))
        k = rng.normal(size=(kd, 1, 1, 2, 3))
        np.testing.assert_allclose(ops.conv3d(T(x), T(k)).numpy(), conv3d_loop(x, k), rtol=1e-5, atol=1e-5)

    def test_conv3d_errors(self):
        with pytest.raises(ValueError):
            ops.conv3d(T(np.ones((4, 1, 1, 2))), T(np.ones((3, 1, 1, 3, 1))))
        with pytest.raises(ValueError):
            ops.conv3d(T(np.ones((2, 1, 1, 1))), T(np.ones((5, 1, 1, 1, 1))), zero_pad=False)

    def test_maxpool_examples(self, backend):
        x = np.array([1, 5, 2, 2], dtype=np.float32).reshape(4, 1, 1, 1)
        assert ops.maxpool3d(T(x)).numpy().ravel().tolist() == [5, 2]
        assert (ops.maxpool3d(T(np.full((6, 2, 2, 3), 0.7))).numpy() == np.float32(0.7)).all()
        assert ops.maxpool3d(T(np.ones((7, 1, 1, 1)))).shape == (3, 1, 1, 1)
        with pytest.raises(ValueError):
            ops.maxpool3d(T(np.ones((1, 1, 1, 1))))

    def test_maxpool_ties_route_to_first(self, backend):
        x = T(np.full((2, 1, 1, 1), 3.0), grad=True)
        ops.maxpool3d(x).sum().backward()
        assert x.grad.ravel().tolist() == [1.0, 0.0]


# -- activations and softmax ---------------------------------------------------------

class TestActivations:
    def test_definitions(self):
        assert ops.relu(T([-2, 3])).numpy().tolist() == [0, 3]
        assert ops.hardtanh(T([0.5, 7])).numpy().tolist() == [0.5, 1]
        assert ops.gelu(T([0.0])).numpy()[0] == 0.0
        np.testing.assert_allclose(ops.leaky_relu(T([-2.0])).numpy(), [-0.02], rtol=1e-6)
        np.testing.assert_allclose(ops.sigmoid(T([0.0])).numpy(), [0.5])
        with pytest.raises(ValueError):
            ops.activation("swish", T([1.0]))

    def test_gelu_tanh_constant(self):
        x = 1.3
        expected = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(ops.gelu(T([x])).numpy(), [expected], rtol=1e-6)

    @pytest.mark.parametrize("kind,expected", [("relu", 0.0), ("leaky_relu", 0.01), ("hardtanh", 1.0)])
    def test_subgradient_at_zero(self, kind, expected):
        x = T([0.0], grad=True)
        ops.activation(kind, x).sum().backward()
        assert x.grad[0] == pytest.approx(expected)

    def test_hardtanh_boundary_gradient_is_zero(self):
        x = T([-1.0, 1.0], grad=True)
        ops.hardtanh(x).sum().backward()
        assert x.grad.tolist() == [0.0, 0.0]

    def test_softmax_examples(self):
        out = ops.scaled_softmax(T(np.full((2, 2, 4), 3.0)), 1.0).numpy()
        np.testing.assert_allclose(out, 0.25, rtol=1e-6)
        out = ops.scaled_softmax(T([[np.log([1, 2, 3])]]), 1.0).numpy()
        np.testing.assert_allclose(out.ravel(), [1 / 6, 2 / 6, 3 / 6], rtol=1e-6)
        F = np.array([[[1.0, 0.0, 0.0]]])
        assert ops.scaled_softmax(T(F), 10.5).numpy().max() >= 0.99
        with pytest.raises(ValueError):
            ops.scaled_softmax(T(F), 0.5)

    @given(arrays(np.float32, (3, 4, 5), elements=st.floats(-50, 50, width=32)), st.floats(1, 20))
    def test_softmax_simplex(self, F, gamma):
        out = ops.scaled_softmax(T(F), gamma).numpy()
        assert (out >= 0).all()
        assert np.abs(out.sum(-1) - 1).max() <= 1e-6


class TestLinear:
    def test_examples(self):
        x = T([[1, 2, 3]])
        np.testing.assert_array_equal(ops.linear(x, T(np.eye(3)), T(np.zeros(3))).numpy(), [[1, 2, 3]])
        np.testing.assert_array_equal(ops.linear(x, T(np.ones((3, 2)))).numpy(), [[6, 6]])
        np.testing.assert_array_equal(ops.linear(x, T(np.zeros((3, 2))), T([4, 5])).numpy(), [[4, 5]])
        with pytest.raises(ValueError):
            ops.linear(x, T(np.ones((2, 2))))


# -- tape behaviour ---------------------------------------------------------------

class TestTape:
    def test_non_finite_is_an_error(self):
        with pytest.raises(NonFiniteError):
            T([1.0]) / T([0.0])

    def test_reused_leaf_accumulates_once_per_backward(self):
        x = T([2.0], grad=True)
        (x * x + x).sum().backward()
        assert x.grad.tolist() == [5.0]
        x.zero_grad()
        (x * 3).sum().backward()
        assert x.grad.tolist() == [3.0]

    def test_no_grad_builds_no_tape(self):
        x = T([1.0], grad=True)
        with no_grad():
            y = x * 2
        assert not y.requires_grad

    def test_concat_and_sum_gradients(self):
        a, b = T(np.ones((2, 2)), grad=True), T(np.ones((2, 3)), grad=True)
        tsum(concat([a, b * 2], axis=-1)).backward()
        assert (a.grad == 1).all() and (b.grad == 2).all()

    def test_default_precision_is_32_bit(self):
        assert T([1.0]).dtype == np.float32
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64


# -- grad_check itself ----------------------------------------------------------

class TestGradCheck:
    def test_square(self):
        x = Tensor(np.array([1.0, 2.0]))
        assert grad_check(lambda z: tsum(z * z), x, 1e-3) < 1e-3

    def test_sum_is_exact(self):
        x = T([0.3, -1.2], grad=True)
        tsum(x).backward()
        assert x.grad.tolist() == [1.0, 1.0]
        assert grad_check(lambda z: tsum(z), x, 1e-3) < 1e-9

    def test_relu_far_from_kink(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]))
        assert grad_check(lambda z: tsum(ops.relu(z)), x, 1e-3) < 1e-3

    def test_rejects_non_scalar_and_non_finite(self):
        with pytest.raises(ValueError):
            grad_check(lambda z: z, Tensor(np.ones(2)), 1e-3)
        with pytest.raises(NonFiniteError):
            grad_check(lambda z: tsum(z) * np.inf, Tensor(np.ones(2)), 1e-3)

    def test_restores_input(self):
        x = T([1.5, -0.5])
        before = x.numpy().copy()
        grad_check(lambda z: weighted_sum(ops.gelu(z)), x, 1e-3)
        assert x.dtype == np.float32 and (x.numpy() == before).all()

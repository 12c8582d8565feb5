"""PPNMM decoder: linear mixing through nonnegative endmember weights, a
head estimating the per-pixel nonlinear coefficient, and the polynomial
post-nonlinear reconstruction."""
import numpy as np

from . import ops
from .nn import Conv3d, Module, Parameter
from .tensor import Tensor, concat, mean, transpose


def effective_endmembers(W):
    """phi(W) = max(0, W) as a differentiable tensor."""
    return ops.relu(W)


def linear_mixing(A_hat, W):
    """Y_lin = A_hat x3 max(0, W): a 1x1 conv whose kernel is the endmember matrix."""
    if A_hat.shape[-1] != W.shape[0]:
        raise ValueError(f"linear_mixing: {A_hat.shape[-1]} abundance channels vs {W.shape[0]} endmembers")
    return ops.mode3_product(A_hat, effective_endmembers(W))


def reconstruct(Y_lin, B_hat):
    """Y_hat = Y_lin + B_hat * Y_lin * Y_lin, B_hat broadcast over bands."""
    return Y_lin + ops.broadcast_field_mul(B_hat, Y_lin * Y_lin)


class NonlinearHead(Module):
    """Estimates B_hat (rows, cols, 1) from the observed and linear cubes.

    The stack [Y, Y_lin, Y_lin^2] is read as a 3L-long depth sequence per
    pixel, passed through a depth-5 conv to ``width`` channels and two
    conv / hardtanh / pool stages.  The remaining features are averaged over
    channels and a zero-initialised linear map over depth positions gives one
    scalar per pixel, so training starts from the linear mixture.
    """

    def __init__(self, bands, rng, width=8, kernel=5):
        self.conv0 = Conv3d(1, width, kernel, rng)
        self.convs = [Conv3d(width, width, kernel, rng) for _ in range(2)]
        depth = (3 * bands) // 2 // 2
        if depth < 1:
            raise ValueError("nonlinear head: too few bands")
        self.depth_out = depth
        self.weight = Parameter(np.zeros((depth, 1)))
        self.bias = Parameter(np.zeros(1))

    def forward(self, Y, Y_lin):
        if Y.shape != Y_lin.shape:
            raise ValueError(f"nonlinear head: {Y.shape} vs {Y_lin.shape}")
        H, W, L = Y.shape
        stack = concat([Y, Y_lin, Y_lin * Y_lin], axis=-1)
        x = transpose(stack, (2, 0, 1)).reshape(3 * L, H, W, 1)
        x = self.conv0(x)
        for conv in self.convs:
            x = ops.maxpool3d(ops.hardtanh(conv(x), -1.0, 1.0))
        feat = transpose(mean(x, axis=-1), (1, 2, 0))
        return ops.linear(feat, self.weight, self.bias)


def nonlinear_head(Y, Y_lin, head):
    return head(Y, Y_lin)


class Decoder(Module):
    """Holds the endmember weights W (R, L) and the nonlinear head.

    With ``nonlinear=False`` the coefficient field is fixed at zero and the
    decoder is a plain linear-mixture decoder.
    """

    def __init__(self, M0, rng, nonlinear=True):
        M0 = np.asarray(M0)
        if M0.ndim != 2:
            raise ValueError("decoder: initial endmembers must be (R, L)")
        self.W = Parameter(M0)
        self.head = NonlinearHead(M0.shape[1], rng)
        self.nonlinear = nonlinear

    @property
    def R(self):
        return self.W.shape[0]

    def forward(self, A_hat, Y):
        """Returns (Y_hat, Y_lin, B_hat)."""
        Y_lin = linear_mixing(A_hat, self.W)
        if self.nonlinear:
            B_hat = self.head(Y, Y_lin)
        else:
            B_hat = Tensor(np.zeros(Y_lin.shape[:2] + (1,)))
        return reconstruct(Y_lin, B_hat), Y_lin, B_hat


def extract_endmembers(decoder):
    """Estimated endmember matrix max(0, W) as a numpy array."""
    return np.maximum(decoder.W.data, 0)

"""The full unmixing autoencoder: dual-branch encoder plus PPNMM decoder."""
from dataclasses import dataclass

import numpy as np

from .decoder import Decoder, extract_endmembers
from .encoder import Encoder, EncoderConfig
from .nn import Module
from .rng import make_rng
from .tensor import Tensor, no_grad


@dataclass
class Output:
    abundances: Tensor
    reconstruction: Tensor
    linear: Tensor
    bfield: Tensor


class DTUNet(Module):
    """Encoder Y -> A_hat on the simplex; decoder (A_hat, Y) -> Y_hat.

    ``M0`` (R, L) initialises the decoder's endmember weights.
    """

    def __init__(self, M0, cfg=None, seed=0, ablate=None, nonlinear=True):
        M0 = np.asarray(M0, dtype=np.float32)
        R, L = M0.shape
        cfg = cfg or EncoderConfig()
        rng = make_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(L, R, cfg, rng, ablate=ablate)
        self.decoder = Decoder(M0, rng, nonlinear=nonlinear)

    @property
    def R(self):
        return self.decoder.R

    @property
    def bands(self):
        return self.decoder.W.shape[1]

    def forward(self, Y):
        if not isinstance(Y, Tensor):
            Y = Tensor(Y)
        if Y.ndim != 3 or Y.shape[2] != self.bands:
            raise ValueError(f"model expects (rows, cols, {self.bands}), got {Y.shape}")
        A = self.encoder(Y)
        Y_hat, Y_lin, B = self.decoder(A, Y)
        return Output(A, Y_hat, Y_lin, B)

    def endmember_parameters(self):
        return [self.decoder.W]

    def other_parameters(self):
        em = {id(p) for p in self.endmember_parameters()}
        return [p for p in self.parameters() if id(p) not in em]

    def endmembers(self):
        return extract_endmembers(self.decoder)

    def predict(self, Y):
        """Abundances, endmembers and B field as numpy arrays, without a tape."""
        with no_grad():
            out = self(Y)
        return out.abundances.numpy(), self.endmembers(), out.bfield.numpy()

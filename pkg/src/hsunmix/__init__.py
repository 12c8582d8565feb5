"""Nonlinear hyperspectral unmixing with a dual-branch dilated-attention
encoder and a polynomial post-nonlinear decoder.

Typical use::

    from hsunmix import RunConfig, fit, gen_dataset, evaluate
    ds = gen_dataset("ppnmm", 48, 48, R=3, L=64, snr_db=30, seed=0)
    model, record = fit(ds.cube, 3, RunConfig(C=36, epochs=300))
    A, M, B = model.predict(ds.cube)
    print(evaluate(A, M, ds.abundances, ds.endmembers, B, ds.bfield))
"""
from .endmembers import farthest_point_init, init_endmembers, vca
from .io import DataError, RunConfig, load_config, load_cube, save_cube
from .kernels import BACKEND
from .metrics import EvalReport, evaluate, match_endmembers
from .mixing import gen_dataset, gbm_pixel, lmm_pixel, ppnmm_pixel
from .model import DTUNet
from .pipeline import build_model, fit
from .tensor import NonFiniteError, Tensor
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DTUNet", "DataError", "EvalReport", "NonFiniteError", "RunConfig", "Tensor",
    "TrainConfig", "build_model", "evaluate", "farthest_point_init", "fit", "gbm_pixel",
    "gen_dataset", "init_endmembers", "lmm_pixel", "load_checkpoint", "load_config", "load_cube",
    "match_endmembers", "ppnmm_pixel", "save_checkpoint", "save_cube", "train", "vca",
]

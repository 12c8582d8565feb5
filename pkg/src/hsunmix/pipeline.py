"""One-call unmixing: initialise endmembers, build the network and train it."""
import numpy as np

from .endmembers import init_endmembers
from .io import RunConfig
from .model import DTUNet
from .training import train


def build_model(cube, R, cfg=None):
    """Endmember initialisation on ``cube`` followed by network construction."""
    cfg = cfg or RunConfig()
    cube = np.asarray(cube, dtype=np.float32)
    M0 = init_endmembers(cube, R, cfg.init_config())
    return DTUNet(M0, cfg.encoder_config(), seed=cfg.seed, ablate=cfg.ablate, nonlinear=cfg.nonlinear)


def fit(cube, R, cfg=None, callback=None, checkpoint_path=None):
    """Train a fresh model on ``cube``; returns (model, TrainRecord)."""
    cfg = cfg or RunConfig()
    model = build_model(cube, R, cfg)
    return train(model, np.asarray(cube, dtype=np.float32), cfg.train_config(),
                 callback=callback, checkpoint_path=checkpoint_path)

"""Losses, the Adam optimiser with per-group learning rates, the full-image
training loop and the checkpoint format."""
import csv
import hashlib
import io
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import ops
from .tensor import NonFiniteError, Tensor, _wrap, mul, tsum

DEFAULT_CLIP = 5.0
CHECKPOINT_MAGIC = "hsunmix-checkpoint"


# -- losses -------------------------------------------------------------------

def _pixel_count(Y):
    return int(np.prod(Y.shape[:-1]))


def loss_re(Y, Y_hat):
    """Squared Frobenius error divided by the number of pixels."""
    Y, Y_hat = _wrap(Y), _wrap(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"loss_re: shapes {Y.shape} and {Y_hat.shape} differ")
    r = Y_hat - Y
    return mul(tsum(r * r), 1.0 / _pixel_count(Y))


def loss_sad(Y, Y_hat):
    """Mean per-pixel spectral angle in radians."""
    ang = ops.spectral_angle(Y, Y_hat)
    return mul(tsum(ang), 1.0 / ang.size)


def total_loss(Y, Y_hat, alpha):
    """alpha * RE + SAD; returns (total, re, sad) tensors."""
    if not alpha > 0:
        raise ValueError("total_loss: alpha must be positive")
    re = loss_re(Y, Y_hat)
    sad = loss_sad(Y, Y_hat)
    return mul(re, float(alpha)) + sad, re, sad


# -- optimiser ----------------------------------------------------------------

class Adam:
    """Adam with decoupled weight decay and several parameter groups.

    ``groups`` is a list of dicts with keys ``params`` and ``lr`` (and
    optionally ``weight_decay``).  Decay is applied as p -= lr * wd * p,
    separately from the moment estimates.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.betas = betas
        self.eps = eps
        self.groups = []
        seen = set()
        for g in groups:
            params = list(g["params"])
            for p in params:
                if id(p) in seen:
                    raise ValueError("Adam: parameter listed in two groups")
                seen.add(id(p))
            if g["lr"] < 0:
                raise ValueError("Adam: learning rates must be >= 0")
            self.groups.append({"params": params, "lr": float(g["lr"]),
                                "weight_decay": float(g.get("weight_decay", weight_decay))})
        self.state = {id(p): (np.zeros_like(p.data), np.zeros_like(p.data))
                      for g in self.groups for p in g["params"]}
        self.t = 0

    def params(self):
        return [p for g in self.groups for p in g["params"]]

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                m, v = self.state[id(p)]
                grad = p.grad.astype(p.data.dtype, copy=False)
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                if wd:
                    p.data -= (lr * wd) * p.data
                p.data -= lr * update

    def zero_grad(self):
        for p in self.params():
            p.grad = None


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# -- training loop --------------------------------------------------------------

@dataclass
class TrainConfig:
    alpha: float = 0.5
    epochs: int = 600
    lr_endmember: float = 1e-5
    lr_rest: float = 1e-2
    weight_decay: float = 1e-3
    seed: int = 0
    clip_norm: Optional[float] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("TrainConfig: alpha must be positive")
        if self.epochs < 1:
            raise ValueError("TrainConfig: epochs must be >= 1")
        if self.lr_endmember < 0 or self.lr_rest < 0 or self.weight_decay < 0:
            raise ValueError("TrainConfig: rates and weight decay must be >= 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("TrainConfig: clip_norm must be positive")


@dataclass
class TrainRecord:
    total: List[float] = field(default_factory=list)
    re: List[float] = field(default_factory=list)
    sad: List[float] = field(default_factory=list)
    wall_time: float = 0.0

    def __len__(self):
        return len(self.total)

    def append(self, total, re, sad):
        self.total.append(total)
        self.re.append(re)
        self.sad.append(sad)

    def to_csv(self):
        """``epoch,total,re,sad`` rows; floats in shortest round-trip form."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "total", "re", "sad"])
        for i, row in enumerate(zip(self.total, self.re, self.sad), start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
        return buf.getvalue()


class TrainingError(NonFiniteError):
    """Training hit a non-finite loss or activation."""

    def __init__(self, epoch, message):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


def make_optimizer(model, cfg):
    return Adam([
        {"params": model.endmember_parameters(), "lr": cfg.lr_endmember},
        {"params": model.other_parameters(), "lr": cfg.lr_rest},
    ], weight_decay=cfg.weight_decay)


def train(model, Y, cfg, callback: Optional[Callable] = None, checkpoint_path=None):
    """Full-image training; one optimiser step per epoch.

    The losses recorded for an epoch are those of the forward pass taken
    before that epoch's update.  ``callback(epoch, total, re, sad)`` runs
    after each step.  With ``checkpoint_path`` and ``cfg.checkpoint_every``
    a checkpoint is rewritten every that many epochs.
    """
    Y = Y if isinstance(Y, Tensor) else Tensor(np.asarray(Y))
    opt = make_optimizer(model, cfg)
    record = TrainRecord()
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        opt.zero_grad()
        try:
            out = model(Y)
            loss, re, sad = total_loss(Y, out.reconstruction, cfg.alpha)
        except NonFiniteError as exc:
            raise TrainingError(epoch, str(exc)) from exc
        vals = (float(loss.item()), float(re.item()), float(sad.item()))
        if not all(math.isfinite(v) for v in vals):
            raise TrainingError(epoch, f"non-finite loss {vals}")
        record.append(*vals)
        loss.backward()
        params = opt.params()
        for p in params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingError(epoch, "non-finite gradient")
        if cfg.clip_norm is not None:
            clip_grad_norm(params, cfg.clip_norm)
        opt.step()
        if callback is not None:
            callback(epoch, *vals)
        if checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model)
    opt.zero_grad()
    record.wall_time = time.perf_counter() - start
    return model, record


# -- checkpoints --------------------------------------------------------------

def model_spec(model):
    """JSON-serialisable description sufficient to rebuild ``model``."""
    return {
        "R": model.R,
        "bands": model.bands,
        "encoder": asdict(model.cfg),
        "ablate": model.encoder.ablate,
        "nonlinear": model.decoder.nonlinear,
    }


def _config_hash(spec):
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, model, extra=None):
    """Header length (uint64 LE), JSON header, raw little-endian float32 blob."""
    spec = model_spec(model)
    named = list(model.named_parameters())
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "model": spec,
        "config_hash": _config_hash(spec),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in named],
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for _, p in named:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path):
    """Returns (header, {name: float32 array})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ValueError(f"{path}: corrupt checkpoint header") from None
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an hsunmix checkpoint")
    if header.get("config_hash") != _config_hash(header["model"]):
        raise ValueError(f"{path}: config hash mismatch")
    blob = raw[8 + hlen:]
    arrays, off = {}, 0
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) * 4
        if off + n > len(blob):
            raise ValueError(f"{path}: parameter blob shorter than header declares")
        arrays[entry["name"]] = np.frombuffer(blob[off:off + n], dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        off += n
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after parameters")
    return header, arrays


def load_checkpoint(path):
    """Rebuild the model stored at ``path``."""
    from .encoder import EncoderConfig
    from .model import DTUNet

    header, arrays = read_checkpoint(path)
    spec = header["model"]
    model = DTUNet(np.zeros((spec["R"], spec["bands"]), dtype=np.float32),
                   EncoderConfig(**spec["encoder"]), ablate=spec["ablate"],
                   nonlinear=spec["nonlinear"])
    for name, p in model.named_parameters():
        if name not in arrays or tuple(arrays[name].shape) != p.shape:
            raise ValueError(f"{path}: parameter {name} missing or misshapen")
        p.data = arrays[name].copy()
    return model

"""File formats: raw cubes with JSON sidecars, flat key=value run
configurations and 8-bit PGM previews."""
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .encoder import ABLATIONS, EncoderConfig
from .endmembers import METHODS, InitConfig
from .training import TrainConfig

CUBE_DTYPE = "f32le"
CUBE_ORDER = "band-interleaved-by-pixel"


class DataError(ValueError):
    """Input files are missing, malformed or inconsistent."""


def sidecar_path(path):
    """JSON header location: the payload path with ``.json`` appended."""
    return Path(str(path) + ".json")


def save_cube(path, cube):
    """Write a (rows, cols, bands) array as little-endian float32, pixel-major,
    with a JSON header next to it."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"save_cube: expected (rows, cols, bands), got {cube.shape}")
    rows, cols, bands = cube.shape
    header = {"rows": rows, "cols": cols, "bands": bands, "dtype": CUBE_DTYPE, "order": CUBE_ORDER}
    Path(path).write_bytes(np.ascontiguousarray(cube, dtype="<f4").tobytes())
    sidecar_path(path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_cube(path):
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise DataError(f"{path}: missing header {side.name}")
    if not path.exists():
        raise DataError(f"{path}: missing payload")
    try:
        header = json.loads(side.read_text())
        rows, cols, bands = (int(header[k]) for k in ("rows", "cols", "bands"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        raise DataError(f"{side}: malformed header") from None
    if header.get("dtype") != CUBE_DTYPE:
        raise DataError(f"{side}: unsupported dtype {header.get('dtype')!r}")
    if header.get("order", CUBE_ORDER) != CUBE_ORDER:
        raise DataError(f"{side}: unsupported order {header.get('order')!r}")
    raw = path.read_bytes()
    expected = rows * cols * bands * 4
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols, bands).astype(np.float32)


def write_pgm(path, image):
    """8-bit binary PGM of a 2-D array, linearly scaled from [min, max]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_pgm: expected a 2-D array")
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros(img.shape) if hi <= lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


# -- run configuration ---------------------------------------------------------

@dataclass
class RunConfig:
    """Every tunable of the encoder, training loop and initialiser."""

    # encoder
    C: int = 108
    gamma: float = 1.0
    spectral_stage_count: Optional[int] = None
    spectral_channels: int = 16
    ca_reduction: int = 4
    window: int = 3
    mlp_ratio: int = 4
    pool_grid: int = 4
    ablate: Optional[str] = None
    nonlinear: bool = True
    # training
    alpha: float = 0.5
    epochs: int = 600
    lr_endmember: float = 1e-5
    lr_rest: float = 1e-2
    weight_decay: float = 1e-3
    seed: int = 0
    clip_norm: Optional[float] = None
    checkpoint_every: int = 0
    # endmember initialisation
    init: str = "vca"
    init_seed: int = 0
    snr_estimate_override: Optional[float] = None

    def __post_init__(self):
        if self.ablate not in ABLATIONS:
            raise ValueError(f"ablate must be spatial, spectral or none, got {self.ablate!r}")
        if self.init not in METHODS:
            raise ValueError(f"init must be one of {METHODS}, got {self.init!r}")
        self.encoder_config()
        self.train_config()

    def encoder_config(self):
        return EncoderConfig(C=self.C, gamma=self.gamma, spectral_stage_count=self.spectral_stage_count,
                             spectral_channels=self.spectral_channels, ca_reduction=self.ca_reduction,
                             window=self.window, mlp_ratio=self.mlp_ratio, pool_grid=self.pool_grid)

    def train_config(self):
        return TrainConfig(alpha=self.alpha, epochs=self.epochs, lr_endmember=self.lr_endmember,
                           lr_rest=self.lr_rest, weight_decay=self.weight_decay, seed=self.seed,
                           clip_norm=self.clip_norm, checkpoint_every=self.checkpoint_every)

    def init_config(self):
        return InitConfig(method=self.init, seed=self.init_seed,
                          snr_estimate_override=self.snr_estimate_override)

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return RunConfig(**d)


_NONE = "none"
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text):
    kind = _TYPES[key]
    text = text.strip()
    optional = "Optional" in str(kind)
    if optional and text.lower() == _NONE:
        return None
    base = str(kind)
    try:
        if base in ("<class 'bool'>", "bool"):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if "int" in base:
            return int(text)
        if "float" in base:
            v = float(text)
            if math.isnan(v):
                raise ValueError(text)
            return v
        return text
    except ValueError:
        raise DataError(f"config: bad value {text!r} for {key}") from None


def parse_overrides(pairs):
    """``["key=value", ...]`` -> dict, rejecting unknown keys."""
    out = {}
    for lineno, line in enumerate(pairs, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def parse_config(text, base=None):
    """Flat ``key = value`` text (``#`` comments) applied over ``base``."""
    base = base or RunConfig()
    try:
        return base.replace(**parse_overrides(text.splitlines()))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"config: {exc}") from None


def load_config(path, base=None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: config file not found")
    return parse_config(path.read_text(), base)


def dump_config(cfg):
    """Resolved configuration as text that :func:`parse_config` maps back to ``cfg``."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            s = _NONE
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"

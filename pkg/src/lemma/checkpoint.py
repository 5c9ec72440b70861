"""Versioned binary checkpoints: config, parameters, optional optimizer state.

Layout (little-endian): magic "LMMA", u32 version, u32 config-json length,
config json, u64 training step, u32 param count, then per parameter a
length-prefixed name, 4 x u32 shape, and raw float32 data. A trailing flag
byte marks optional optimizer moments (same order as the parameters).
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError
from .model import LemmaConfig, LemmaModel, build

MAGIC = b"LMMA"
VERSION = 1


def _write_array(f, arr: np.ndarray) -> None:
    f.write(struct.pack("<4I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(f) -> np.ndarray:
    shape = struct.unpack("<4I", f.read(16))
    n = int(np.prod(shape))
    data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
    return np.ascontiguousarray(data)


def save_checkpoint(path: str, model: LemmaModel, adam_state=None, step: int = 0) -> None:
    cfg = model.config
    cfg_json = json.dumps({
        "nrb_l": cfg.nrb_l, "nrb_m": cfg.nrb_m, "nrb_h": cfg.nrb_h,
        "nc": cfg.nc, "width_low": cfg.width_low, "width_high": cfg.width_high,
    }).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_json)))
        f.write(cfg_json)
        f.write(struct.pack("<Q", step))
        f.write(struct.pack("<I", len(model.params)))
        for name, t in model.params.items():
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            _write_array(f, t.data)
        if adam_state is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<dddd", adam_state.lr, adam_state.beta1,
                                adam_state.beta2, adam_state.epsilon))
            f.write(struct.pack("<Q", adam_state.t))
            for name in model.params.names():
                _write_array(f, adam_state.m[name])
                _write_array(f, adam_state.v[name])


def load_checkpoint(path: str):
    """Returns (model, adam_state or None, step)."""
    from .trainer import AdamState  # local import to avoid a cycle
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DataError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg = LemmaConfig(**json.loads(f.read(cfg_len).decode()))
        (step,) = struct.unpack("<Q", f.read(8))
        (n_params,) = struct.unpack("<I", f.read(4))
        model = build(cfg, seed=0)
        if n_params != len(model.params):
            raise DataError(f"{path} has {n_params} parameters, model expects "
                            f"{len(model.params)}")
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            arr = _read_array(f)
            if name not in model.params:
                raise DataError(f"{path} has unknown parameter {name!r}")
            t = model.params[name]
            if arr.shape != t.data.shape:
                raise DataError(f"parameter {name!r} shape {arr.shape} != "
                                f"expected {t.data.shape}")
            t.data = arr.copy()
        (has_adam,) = struct.unpack("<B", f.read(1))
        adam_state = None
        if has_adam:
            lr, beta1, beta2, eps = struct.unpack("<dddd", f.read(32))
            (t_step,) = struct.unpack("<Q", f.read(8))
            adam_state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=eps)
            adam_state.t = t_step
            for name in model.params.names():
                adam_state.m[name] = _read_array(f).copy()
                adam_state.v[name] = _read_array(f).copy()
    return model, adam_state, step

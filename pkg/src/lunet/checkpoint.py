"""Binary checkpoint format: model spec, every parameter tensor, batch-norm
running statistics, and the standardization constants needed for evaluation.

Layout (all integers and floats little-endian):
  magic "LUNET1\\0" | u32 version | spec key=value block | meta key=value block
  | u32 tensor count | tensors (u16 name len, name, u8 rank, u32 dims, f64 data)
"""

from __future__ import annotations

import struct

import numpy as np

from . import model as model_mod
from .model import LuNetModel, LuNetSpec

MAGIC = b"LUNET1\0"
VERSION = 1


class CheckpointError(Exception):
    pass


def _write_block(fh, mapping: dict):
    text = "".join(f"{k}={v}\n" for k, v in mapping.items()).encode("utf-8")
    fh.write(struct.pack("<I", len(text)))
    fh.write(text)


def _read_block(fh) -> dict:
    (n,) = struct.unpack("<I", fh.read(4))
    out = {}
    for line in fh.read(n).decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out


def _write_tensor(fh, name: str, value: np.ndarray):
    b = name.encode("utf-8")
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)
    fh.write(struct.pack("<B", value.ndim))
    for d in value.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def _read_tensor(fh):
    (n,) = struct.unpack("<H", fh.read(2))
    name = fh.read(n).decode("utf-8")
    (rank,) = struct.unpack("<B", fh.read(1))
    dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(rank)]
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").copy().reshape(dims)
    return name, data


def save_checkpoint(path, model: LuNetModel, mean: np.ndarray, std: np.ndarray,
                    class_names: list, encoded_columns: list, task: str):
    tensors = [("standardize.mean", mean), ("standardize.std", std)]
    tensors += [(name, value) for name, _, _, value in model.named_params()]
    tensors += list(model.named_state())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_block(fh, model.spec.to_mapping())
        _write_block(fh, {
            "task": task,
            "class_names": "|".join(class_names),
            "encoded_columns": "|".join(encoded_columns),
        })
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors:
            _write_tensor(fh, name, value)


def load_checkpoint(path):
    """Returns (model, mean, std, class_names, encoded_columns, task).

    The rebuilt model reproduces infer-mode outputs of the saved one bitwise.
    """
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        spec = LuNetSpec.from_mapping(_read_block(fh))
        meta = _read_block(fh)
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = dict(_read_tensor(fh) for _ in range(count))
    model = model_mod.build(spec)
    for name, layer, pname, value in model.named_params():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != value.shape:
            raise CheckpointError(f"{path}: tensor {name!r} shape mismatch")
        layer.params[pname] = tensors[name]
        layer.grads[pname] = np.zeros_like(tensors[name])
    for layer in model.layers:
        for sname, value in layer.state_tensors().items():
            full = f"{layer.name}.{sname}"
            if full not in tensors:
                raise CheckpointError(f"{path}: missing tensor {full!r}")
            value[...] = tensors[full]
    model.set_mode("infer")
    class_names = meta["class_names"].split("|")
    encoded_columns = meta["encoded_columns"].split("|") if meta["encoded_columns"] else []
    return (model, tensors["standardize.mean"], tensors["standardize.std"],
            class_names, encoded_columns, meta["task"])

"""Versioned binary checkpoints.

Layout (little-endian)::

    b"OAC1" | u32 version | u32 header_len | header (UTF-8 JSON) |
    u32 n_tensors | n_tensors x (u32 name_len | name | u32 ndim | ndim x u32 | float64 data)

The JSON header holds the run configuration and all scalar optimizer and
schedule state. Keys are sorted and floats use shortest round-trip repr,
so ``save(load(path))`` reproduces the file byte for byte.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .image import FEATURE_DIM, ImageProjector
from .optim import AdamState, PlateauSchedule
from .tensor import Tensor
from .text import ALPHABET_SIZE, ARCHITECTURES, CttModel, MaxConvLayer, POOLED_DIM

MAGIC = b"OAC1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    text_model: CttModel
    projector: ImageProjector
    adam: AdamState
    plateau: PlateauSchedule
    epoch: int
    config: dict

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return self.text_model.named_parameters() + self.projector.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def copy(self) -> "Checkpoint":
        return copy.deepcopy(self)


def _header(ckpt: Checkpoint) -> dict:
    adam = {k: getattr(ckpt.adam, k) for k in ("lr", "beta1", "beta2", "eps", "step")}
    return {
        "format_version": VERSION,
        "arch_id": ckpt.text_model.arch_id,
        "d": ckpt.text_model.d,
        "epoch": ckpt.epoch,
        "adam": adam,
        "plateau": asdict(ckpt.plateau),
        "config": ckpt.config,
    }


def _tensor_records(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    named = ckpt.named_parameters()
    records = [(name, p.data) for name, p in named]
    if ckpt.adam.m:
        records += [(f"adam.m.{name}", m) for (name, _), m in zip(named, ckpt.adam.m)]
        records += [(f"adam.v.{name}", v) for (name, _), v in zip(named, ckpt.adam.v)]
    return records


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    records = _tensor_records(ckpt)
    parts.append(struct.pack("<I", len(records)))
    for name, arr in records:
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    pos += header_len
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", raw, pos)
        shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
        pos += 4 + 4 * ndim
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes in checkpoint")
    return _assemble(header, tensors)


def _take(tensors: dict[str, np.ndarray], name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name not in tensors:
        raise CheckpointError(f"checkpoint lacks tensor {name!r}")
    arr = tensors.pop(name)
    if arr.shape != shape:
        raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
    return arr


def _assemble(header: dict, tensors: dict[str, np.ndarray]) -> Checkpoint:
    arch_id, d = header["arch_id"], header["d"]
    if arch_id not in ARCHITECTURES:
        raise CheckpointError(f"unknown architecture {arch_id!r} in checkpoint")

    def param(name, shape):
        return Tensor(_take(tensors, name, shape), name=name)

    layers = []
    c_in = ALPHABET_SIZE
    for i, (filters, length) in enumerate(ARCHITECTURES[arch_id], start=1):
        pre = f"text.conv{i}."
        layers.append(MaxConvLayer(param(pre + "w1", (filters, c_in, length)), param(pre + "b1", (filters,)),
                                   param(pre + "w2", (filters, c_in, length)), param(pre + "b2", (filters,))))
        c_in = filters
    model = CttModel(arch_id, layers, param("text.w_t", (d, POOLED_DIM)))
    proj = ImageProjector(param("image.w_i", (d, FEATURE_DIM)))
    names = [name for name, _ in model.named_parameters() + proj.named_parameters()]
    shapes = [p.shape for p in model.parameters() + proj.parameters()]

    adam = AdamState(**header["adam"])
    if any(key.startswith("adam.") for key in tensors):
        adam.m = [_take(tensors, f"adam.m.{n}", s) for n, s in zip(names, shapes)]
        adam.v = [_take(tensors, f"adam.v.{n}", s) for n, s in zip(names, shapes)]
    if tensors:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(tensors)}")
    plateau = PlateauSchedule(**header["plateau"])
    return Checkpoint(model, proj, adam, plateau, header["epoch"], header["config"])


def save(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())

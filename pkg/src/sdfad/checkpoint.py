"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     7 bytes   b"SDF3AD\\x01"
    version   u16
    crc32     u32       CRC32 of everything after this field
    meta_len  u32
    meta      meta_len bytes of UTF-8 JSON (configs, transform, shapes,
              loss history, parameter dtype)
    grid      per level: level u32, resolution u32, feature_dim u32, then
              (resolution + 1)^3 * feature_dim floats, x-fastest vertex order
    net       layer_count u32, then per layer: fan_in u32, fan_out u32,
              row-major (fan_in, fan_out) weights, then fan_out biases

Floats are stored in the model's parameter dtype (``"<f4"`` by default,
``"<f8"`` for 64-bit models), so a round trip is bit exact.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, MeshIoError
from .isd import SdfNet
from .mesh import NormalizationTransform
from .mlf import FeatureGridPyramid, FeatureVolume
from .npg import SamplingConfig
from .train import ModelConfig, TrainConfig, TrainedModel

MAGIC = b"SDF3AD\x01"
VERSION = 1
_HEADER = struct.Struct("<7sHI")


def _float_code(dtype):
    return {"float32": "<f4", "float64": "<f8"}[np.dtype(dtype).name]


def to_bytes(model):
    code = _float_code(model.model_cfg.dtype)
    meta = {
        "float": code,
        "transform": model.transform.to_dict(),
        "sampling": model.sampling.to_dict(),
        "model": model.model_cfg.to_dict(),
        "train": model.train_cfg.to_dict(),
        "loss_history": [float(x) for x in model.loss_history],
        "base_lod": model.pyramid.base_lod,
        "levels": [[v.level, v.resolution, v.feature_dim] for v in model.pyramid.levels],
        "layers": [list(w.shape) for w in model.net.weights],
        "activation": model.net.activation,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<I", len(meta_bytes)), meta_bytes]
    for v in model.pyramid.levels:
        parts.append(struct.pack("<III", v.level, v.resolution, v.feature_dim))
        parts.append(np.ascontiguousarray(v.features, dtype=code).tobytes())
    parts.append(struct.pack("<I", len(model.net.weights)))
    for w, b in zip(model.net.weights, model.net.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype=code).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=code).tobytes())
    payload = b"".join(parts)
    return _HEADER.pack(MAGIC, VERSION, zlib.crc32(payload)) + payload


def save_checkpoint(model, path):
    try:
        Path(path).write_bytes(to_bytes(model))
    except OSError as exc:
        raise MeshIoError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf, pos):
        self.buf, self.pos = buf, pos

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self, what, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, what))
        return vals[0] if count == 1 else vals

    def floats(self, code, count, what):
        itemsize = np.dtype(code).itemsize
        return np.frombuffer(self.take(itemsize * count, what), dtype=code).astype(
            np.dtype(code).newbyteorder("="))


def _expected_size(meta):
    itemsize = np.dtype(meta["float"]).itemsize
    n = 4 + 4  # meta_len and layer count
    for _, res, dim in meta["levels"]:
        n += 12 + (res + 1) ** 3 * dim * itemsize
    for fan_in, fan_out in meta["layers"]:
        n += 8 + (fan_in * fan_out + fan_out) * itemsize
    return n


def from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("checkpoint truncated: header incomplete")
    magic, version, crc = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version: expected {VERSION}, found {version}")
    payload = buf[_HEADER.size:]
    rd = _Reader(payload, 0)
    meta_len = rd.u32("metadata length")
    meta_raw = rd.take(meta_len, "metadata")
    if zlib.crc32(payload) != crc:
        try:
            meta = json.loads(meta_raw.decode("utf-8"))
            short = len(payload) < _expected_size(meta) + meta_len
        except (ValueError, KeyError, TypeError):
            short = False
        if short:
            raise FormatError("checkpoint truncated: parameter blocks incomplete")
        raise ChecksumError("checkpoint CRC32 mismatch")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"unreadable metadata: {exc}") from None

    code = meta["float"]
    levels = []
    for k in range(len(meta["levels"])):
        level, res, dim = rd.u32(f"grid level {k} header", 3)
        feats = rd.floats(code, (res + 1) ** 3 * dim, f"grid level {k}")
        levels.append(FeatureVolume(level, res, feats.reshape(-1, dim)))
    n_layers = rd.u32("layer count")
    weights, biases = [], []
    for k in range(n_layers):
        fan_in, fan_out = rd.u32(f"layer {k} shape", 2)
        weights.append(rd.floats(code, fan_in * fan_out, f"layer {k} weights").reshape(fan_in, fan_out))
        biases.append(rd.floats(code, fan_out, f"layer {k} bias"))
    if rd.pos != len(payload):
        raise FormatError(f"{len(payload) - rd.pos} trailing bytes after parameter blocks")

    model_cfg = meta["model"]
    train_cfg = meta["train"]
    sampling = meta["sampling"]
    return TrainedModel(
        pyramid=FeatureGridPyramid(meta["base_lod"], levels),
        net=SdfNet(weights, biases, meta["activation"]),
        transform=NormalizationTransform.from_dict(meta["transform"]),
        sampling=SamplingConfig(**sampling),
        model_cfg=ModelConfig(**model_cfg),
        train_cfg=TrainConfig(**train_cfg),
        loss_history=list(meta["loss_history"]),
    )


def load_checkpoint(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise MeshIoError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)

"""Symmetric per-tensor int8 weight quantization and the LCAS model file."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelSpec, build_spec, fold_batchnorm, folded_spec, normalize_id

LCAS_MAGIC = b"LCAS"
LCAS_VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1
QMAX = 127


class FormatError(ValueError):
    """Malformed LCAS byte stream; ``offset`` is where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class QuantizedTensor:
    shape: tuple[int, ...]
    values: np.ndarray  # int8, in [-127, 127]
    scale: np.float32

    def __eq__(self, other):
        return (
            isinstance(other, QuantizedTensor)
            and tuple(self.shape) == tuple(other.shape)
            and np.float32(self.scale) == np.float32(other.scale)
            and np.array_equal(self.values, other.values)
        )


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_tensor(w) -> QuantizedTensor:
    w = np.asarray(w, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ValueError("cannot quantize non-finite values")
    peak = float(np.abs(w).max()) if w.size else 0.0
    scale = np.float32(peak / QMAX) if peak > 0 else np.float32(1.0)
    if scale == 0:  # peak below float32 range
        scale = np.float32(np.finfo(np.float32).tiny)
    q = np.clip(_round_half_away(w / float(scale)), -QMAX, QMAX).astype(np.int8)
    return QuantizedTensor(tuple(w.shape), q, scale)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    return (qt.values.astype(np.float32) * np.float32(qt.scale)).astype(np.float32)


@dataclass
class QuantizedModel:
    """A stored model: int8 weight tensors and/or fp32 tensors, in file order.

    An all-fp32 instance is a training checkpoint (or an fp32 deployment model).
    """

    model_id: str
    decomposed: bool
    tensors: dict[str, "QuantizedTensor | np.ndarray"] = field(default_factory=dict)

    @property
    def is_quantized(self) -> bool:
        return any(isinstance(t, QuantizedTensor) for t in self.tensors.values())

    def __eq__(self, other):
        if not isinstance(other, QuantizedModel):
            return NotImplemented
        if (self.model_id, self.decomposed) != (other.model_id, other.decomposed):
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        for k, a in self.tensors.items():
            b = other.tensors[k]
            if isinstance(a, QuantizedTensor) or isinstance(b, QuantizedTensor):
                if a != b:
                    return False
            elif a.dtype != b.dtype or not np.array_equal(a, b):
                return False
        return True


def checkpoint(spec: ModelSpec, params: dict[str, np.ndarray]) -> QuantizedModel:
    """fp32 checkpoint holding every parameter, BN running stats included."""
    tensors = {name: np.asarray(params[name], dtype=np.float32) for name in spec.tensors()}
    return QuantizedModel(spec.id, spec.decomposed, tensors)


def deployment_model(spec: ModelSpec, params: dict[str, np.ndarray], quantize: bool = True) -> QuantizedModel:
    """Fold BN into the next layer, then (optionally) quantize conv/dense weights to int8."""
    fspec, fparams = fold_batchnorm(spec, params)
    tensors: dict = {}
    for name, info in fspec.tensors().items():
        w = np.asarray(fparams[name], dtype=np.float32)
        tensors[name] = quantize_tensor(w) if (quantize and info.quantizable) else w
    return QuantizedModel(spec.id, spec.decomposed, tensors)


def to_network(model: QuantizedModel) -> tuple[ModelSpec, dict[str, np.ndarray]]:
    """Resolve the layer structure for a stored model and return float32 parameters."""
    base = build_spec(model.model_id, model.decomposed)
    names = set(model.tensors)
    for spec in (base, folded_spec(base)):
        if set(spec.tensors()) == names:
            break
    else:
        raise ValueError(f"tensor set of stored {model.model_id} model does not match its architecture")
    params = {}
    for name, info in spec.tensors().items():
        t = model.tensors[name]
        arr = dequantize(t) if isinstance(t, QuantizedTensor) else np.asarray(t, dtype=np.float32)
        if arr.shape != info.shape:
            raise ValueError(f"tensor {name} has shape {arr.shape}, expected {info.shape}")
        params[name] = arr
    return spec, params


# --- LCAS byte format -----------------------------------------------------------


def serialize(model: QuantizedModel) -> bytes:
    mid = {"M1": 1, "M2": 2, "M3": 3}[normalize_id(model.model_id)]
    out = bytearray(struct.pack("<4sBBBH", LCAS_MAGIC, LCAS_VERSION, mid, int(model.decomposed), len(model.tensors)))
    for name, t in model.tensors.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 255:
            raise ValueError(f"tensor name too long: {name!r}")
        out += struct.pack("<B", len(raw_name)) + raw_name
        if isinstance(t, QuantizedTensor):
            shape = tuple(t.shape)
            out += struct.pack("<BB", DTYPE_I8, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
            out += struct.pack("<f", t.scale) + np.ascontiguousarray(t.values, dtype="i1").tobytes()
        else:
            arr = np.asarray(t)
            out += struct.pack("<BB", DTYPE_F32, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated stream while reading {what}", self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def deserialize(blob: bytes) -> QuantizedModel:
    if len(blob) < 4:
        raise FormatError("truncated stream while reading CRC", 0)
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    r = _Reader(body)
    magic = r.take(4, "magic")
    if magic != LCAS_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    (version,) = r.unpack("<B", "version")
    if version != LCAS_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    mid_pos = r.pos
    mid, decomposed, count = r.unpack("<BBH", "header")
    if mid not in (1, 2, 3):
        raise FormatError(f"unknown model id {mid}", mid_pos)
    tensors: dict = {}
    for _ in range(count):
        (nlen,) = r.unpack("<B", "tensor name length")
        name_pos = r.pos
        try:
            name = r.take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", name_pos) from None
        dtype_pos = r.pos
        dtype, rank = r.unpack("<BB", "tensor dtype/rank")
        shape = r.unpack(f"<{rank}I", "tensor dims")
        n = int(np.prod(shape)) if rank else 1
        if dtype == DTYPE_I8:
            (scale,) = r.unpack("<f", "tensor scale")
            values = np.frombuffer(r.take(n, f"values of {name}"), dtype="i1").reshape(shape).copy()
            tensors[name] = QuantizedTensor(tuple(shape), values, np.float32(scale))
        elif dtype == DTYPE_F32:
            values = np.frombuffer(r.take(4 * n, f"values of {name}"), dtype="<f4").reshape(shape)
            tensors[name] = values.astype(np.float32)
        else:
            raise FormatError(f"unknown dtype code {dtype} for tensor {name!r}", dtype_pos)
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected trailing bytes", r.pos)
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if actual != crc:
        raise FormatError(f"CRC mismatch: stored {crc:08x}, computed {actual:08x}", len(body))
    return QuantizedModel(normalize_id(mid), bool(decomposed), tensors)


def save_model(path: str | Path, model: QuantizedModel) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = serialize(model)
    path.write_bytes(blob)
    return len(blob)


def load_model(path: str | Path) -> QuantizedModel:
    return deserialize(Path(path).read_bytes())

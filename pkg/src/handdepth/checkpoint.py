"""Single-file checkpoint format.

Byte layout (all integers little-endian, documented in README):

    magic    8 bytes   b"HGDEPTH1"
    version  uint32    currently 1
    cfg_len  uint32    length of the UTF-8 JSON encoding of ModelConfig
    cfg      cfg_len bytes
    count    uint32    number of named entries
    then per entry:
      name_len  uint32
      name      name_len UTF-8 bytes (dotted module path)
      kind      uint8   0 = trainable parameter, 1 = buffer (running stats)
      ndim      uint8
      dims      ndim * uint32
      values    prod(dims) * float32, little-endian, row-major

Parameters are stored as 32-bit floats regardless of the compute
precision, so a save/load round trip of a float32 model is bitwise
exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig, StackedHourglass

MAGIC = b"HGDEPTH1"
VERSION = 1


def _write_entry(f, name: str, kind: int, array: np.ndarray):
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<BB", kind, array.ndim))
    f.write(struct.pack(f"<{array.ndim}I", *array.shape))
    f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def save_checkpoint(path, model: StackedHourglass):
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())
    cfg_bytes = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(params) + len(buffers)))
        for name, p in params:
            _write_entry(f, name, 0, p.data)
        for name, b in buffers:
            _write_entry(f, name, 1, b)
    tmp.replace(path)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataError("checkpoint file truncated")
    return data


def load_checkpoint(path, dtype=np.float32) -> StackedHourglass:
    """Rebuild the model a checkpoint describes and fill in its state."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with open(path, "rb") as f:
        if _read_exact(f, 8) != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4))
        config = ModelConfig.from_dict(json.loads(_read_exact(f, cfg_len).decode("utf-8")))
        model = StackedHourglass(config, dtype=dtype)
        params = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            kind, ndim = struct.unpack("<BB", _read_exact(f, 2))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            values = np.frombuffer(
                _read_exact(f, 4 * int(np.prod(shape, dtype=np.int64))), dtype="<f4"
            ).reshape(shape)
            target = params if kind == 0 else buffers
            if name not in target:
                raise DataError(f"checkpoint entry {name!r} not present in the model")
            if kind == 0:
                if target[name].data.shape != shape:
                    raise DataError(
                        f"checkpoint entry {name!r} shape {shape} != model {target[name].data.shape}"
                    )
                target[name].data = values.astype(dtype)
            else:
                if target[name].shape != shape:
                    raise DataError(
                        f"checkpoint entry {name!r} shape {shape} != model {target[name].shape}"
                    )
                target[name][...] = values.astype(dtype)
            seen.add((kind, name))
    missing = (
        {(0, n) for n in params} | {(1, n) for n in buffers}
    ) - seen
    if missing:
        raise DataError(f"checkpoint is missing {len(missing)} entries, e.g. {sorted(missing)[:3]}")
    return model

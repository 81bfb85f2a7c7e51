"""Named trainable parameters and the on-disk weights container.

Container layout (little-endian):
  magic   4 bytes  b"WCWT"
  version 1 byte   0x01
  count   uint32
  then per record: uint16 name length, UTF-8 name, uint8 ndim,
  ndim x uint32 dims, float64 data in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ShapeMismatch, UnsupportedFormat
from .tensor import Tensor, parameter

MAGIC = b"WCWT"
VERSION = 1


class ParamStore:
    """Ordered name -> Tensor map of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ShapeMismatch(f"duplicate parameter name {name!r}")
        t = parameter(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            if k not in state:
                raise ShapeMismatch(f"missing parameter {k!r} in state")
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeMismatch(f"{k!r}: shape {arr.shape} vs expected {t.data.shape}")
            t.data = arr.copy()


def save_weights(store, path) -> None:
    items = store.items() if isinstance(store, ParamStore) else store.items()
    records = [(k, v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)) for k, v in items]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(records)))
        for name, arr in records:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise UnsupportedFormat(f"{path}: not a weights container")
    if blob[4] != VERSION:
        raise UnsupportedFormat(f"{path}: unsupported container version {blob[4]}")
    (count,) = struct.unpack_from("<I", blob, 5)
    pos = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        ndim = blob[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        out[name] = arr.astype(np.float64)
    return out

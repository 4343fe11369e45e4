"""Named parameter store and the GSETCKPT checkpoint format.

File layout (all little-endian):
    magic "GSETCKPT" | u32 version | u32 entry count |
    per entry: u16 path length, utf-8 path, u8 dtype tag, u8 ndim,
               ndim x u32 extents, raw values.

Dtype tags: 0 = float32, 1 = float64, 2 = uint64, 3 = uint8. The store's
seed rides along as a hidden uint64 entry so a round trip is byte-exact.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import CompatibilityError, DimensionError
from .tensor import Tensor

MAGIC = b"GSETCKPT"
VERSION = 1
_SEED_PATH = "__seed__"

_TAG_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1,
           np.dtype("uint64"): 2, np.dtype("uint8"): 3}
_DTYPE_OF = {0: np.dtype("<f4"), 1: np.dtype("<f8"),
             2: np.dtype("<u8"), 3: np.dtype("u1")}


class ParamStore:
    """Insertion-ordered map from dotted path to Tensor, plus the RNG seed."""

    def __init__(self, seed=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.rng = np.random.default_rng(self.seed)
        self._params = {}

    def add(self, path, data, requires_grad=True):
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = data if isinstance(data, Tensor) else Tensor(np.asarray(data), dtype=np.asarray(data).dtype)
        t.requires_grad = requires_grad
        self._params[path] = t
        return t

    def __getitem__(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable(self):
        return [(p, t) for p, t in self._params.items() if t.requires_grad]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    # ------------------------------------------------------------------
    # serialization

    def to_bytes(self):
        chunks = [MAGIC, struct.pack("<II", VERSION, len(self._params) + 1)]
        entries = [(_SEED_PATH, np.asarray([self.seed], dtype="<u8"))]
        entries += [(p, t.data) for p, t in self._params.items()]
        for path, arr in entries:
            encoded = path.encode("utf-8")
            tag = _TAG_OF[np.dtype(arr.dtype.name)]
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<BB", tag, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype=_DTYPE_OF[tag]).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob):
        if blob[:8] != MAGIC:
            raise CompatibilityError("not a GSETCKPT checkpoint")
        version, count = struct.unpack_from("<II", blob, 8)
        if version != VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {version}")
        offset = 16
        store = cls(seed=0)
        for _ in range(count):
            (plen,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            path = blob[offset:offset + plen].decode("utf-8")
            offset += plen
            tag, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            dtype = _DTYPE_OF[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
            offset += nbytes
            if path == _SEED_PATH:
                store.seed = int(arr[0])
                store.rng = np.random.default_rng(store.seed)
            else:
                store.add(path, arr, requires_grad=False)
        return store

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def fingerprint(self):
        """SHA-256 of the serialized store (hex)."""
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def copy_values_from(self, other, prefix=""):
        """Fill matching paths from another store; shapes must agree."""
        for path, tensor in self._params.items():
            src = prefix + path
            if src not in other._params:
                raise CompatibilityError(f"checkpoint is missing parameter {src!r}")
            value = other._params[src].data
            if value.shape != tensor.data.shape:
                raise DimensionError(
                    f"shape mismatch for {src!r}: checkpoint {value.shape}, model {tensor.data.shape}"
                )
            tensor.data = value.astype(tensor.data.dtype, copy=True)

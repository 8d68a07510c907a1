"""Shared predictor contract, input scaling and the model file format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from ..errors import ValidationError
from ..roadnet import SeriesSet

METHOD_ORDER = ("baseline", "ar", "gb", "mlp", "lstm", "bmlp", "cmlp", "gcnn")
MODEL_COUNT_CLASS = {
    "baseline": "O(N)",
    "ar": "O(N)",
    "gb": "O(Nh)",
    "mlp": "O(N)",
    "lstm": "O(N)",
    "bmlp": "O(1)",
    "cmlp": "O(C)",
    "gcnn": "O(1)",
}
SCOPE = {
    "baseline": "link", "ar": "link", "gb": "link", "mlp": "link", "lstm": "link",
    "bmlp": "network", "cmlp": "cluster", "gcnn": "network",
}

_REGISTRY: dict[str, type["Predictor"]] = {}


def derived_seed(seed: int, key: int) -> int:
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


@dataclass(frozen=True)
class Scaler:
    """Affine map applied to speeds before they enter a network."""

    mean: float
    std: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0 else 1.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


class Predictor:
    """A fitted forecaster covering ``self.links``.

    ``predict(sset, origins)`` returns an array (len(links), len(origins), h)
    and may only read the series at ``origin + input_offsets()``; every
    offset is <= 0. Models that also read their training history say so in
    ``history_end``, the first index they never touch.
    """

    kind: ClassVar[str] = ""
    links: list[int]
    h: int

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            _REGISTRY[cls.kind] = cls

    @property
    def model_count_class(self) -> str:
        return MODEL_COUNT_CLASS[self.kind]

    @property
    def scope(self) -> str:
        return SCOPE[self.kind]

    def input_offsets(self) -> np.ndarray:
        raise NotImplementedError

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hyper(self) -> dict:
        raise NotImplementedError

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @classmethod
    def restore(cls, hyper: dict, arrays: dict[str, np.ndarray]) -> "Predictor":
        raise NotImplementedError

    def _check_origins(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = np.asarray(origins, dtype=np.int64)
        off = self.input_offsets()
        if off.size and origins.size:
            lo = origins.min() + off.min()
            if lo < 0:
                raise ValidationError(f"origin {origins.min()} lacks {-off.min()} steps of history")
        if origins.size and origins.max() >= sset.axis.count:
            raise ValidationError("origin beyond the end of the series")
        missing = [l for l in self.links if l not in sset.series]
        if missing:
            raise ValidationError(f"series set lacks links {missing}")
        return origins


# ---------------------------------------------------------------------------
# model files

MAGIC = b"TFMD"
VERSION = b"1"


def _pack_str(s: str, width: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<" + width, len(raw)) + raw


def dumps(model: Predictor) -> bytes:
    """Magic ``TFMD1``, type tag, JSON hyperparameters, then named float64 arrays
    (name, ndim, dims, raw little-endian data)."""
    parts = [MAGIC + VERSION, _pack_str(model.kind, "H"),
             _pack_str(json.dumps(model.hyper(), sort_keys=True), "I")]
    arrays = model.arrays()
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        parts.append(_pack_str(name, "H"))
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Predictor:
    if data[:4] != MAGIC:
        raise ValidationError("not a model file (bad magic)")
    if data[4:5] != VERSION:
        raise ValidationError(f"model file version {data[4:5]!r} unsupported (expected {VERSION!r})")
    off = 5

    def read_str(width: str) -> str:
        nonlocal off
        (n,) = struct.unpack_from("<" + width, data, off)
        off += struct.calcsize("<" + width)
        s = data[off:off + n].decode("utf-8")
        off += n
        return s

    kind = read_str("H")
    hyper = json.loads(read_str("I"))
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = {}
    for _ in range(count):
        name = read_str("H")
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(data):
        raise ValidationError("trailing bytes in model file")
    if kind not in _REGISTRY:
        raise ValidationError(f"unknown model kind {kind!r}")
    return _REGISTRY[kind].restore(hyper, arrays)


def serialize(model: Predictor, path: str | Path) -> int:
    """Write ``model`` to ``path``; returns the size in bytes."""
    data = dumps(model)
    Path(path).write_bytes(data)
    return len(data)


def deserialize(path: str | Path) -> Predictor:
    return loads(Path(path).read_bytes())


def model_size(model: Predictor) -> int:
    return len(dumps(model))

"""Language-neutral JSON wire helpers: base64-embedded little-endian arrays."""

from __future__ import annotations

import base64

import numpy as np

from .errors import SchemaError

_DTYPES = {"f32": "<f4", "u8": "u1"}


def encode_array(arr: np.ndarray, dtype: str = "f32") -> dict:
    if dtype not in _DTYPES:
        raise SchemaError(f"unsupported wire dtype {dtype!r}")
    data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
    return {
        "shape": list(data.shape),
        "dtype": dtype,
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    try:
        dtype = _DTYPES[obj["dtype"]]
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed wire array: {exc}") from exc
    count = 1
    for s in shape:
        count *= s
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != count * itemsize:
        raise SchemaError(f"wire array payload is {len(raw)} bytes, expected {count * itemsize}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

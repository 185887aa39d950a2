"""Binary and text serialization helpers.

All float payloads are little-endian 64-bit, row-major, preceded by
little-endian 64-bit unsigned integer headers.  Files written through
these helpers are byte-reproducible for identical inputs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

_U64 = struct.Struct("<Q")


def write_array(path, array, header=()):
    """Write ``header`` u64 fields followed by the raw float64 payload."""
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        for field in header:
            fh.write(_U64.pack(int(field)))
        fh.write(array.tobytes())


def read_array(path, n_header, shape_from_header):
    """Read ``n_header`` u64 fields, then floats shaped per the callback.

    ``shape_from_header`` maps the header tuple to the expected array
    shape; a payload size mismatch raises :class:`DataError`.
    """
    raw = Path(path).read_bytes()
    need = n_header * _U64.size
    if len(raw) < need:
        raise DataError(f"{path}: truncated header")
    header = tuple(_U64.unpack_from(raw, i * _U64.size)[0] for i in range(n_header))
    shape = shape_from_header(header)
    count = int(np.prod(shape)) if shape else 0
    payload = np.frombuffer(raw, dtype="<f8", count=count, offset=need)
    if payload.size != count or len(raw) != need + 8 * count:
        raise DataError(f"{path}: payload size does not match header {header}")
    return header, payload.reshape(shape).astype(np.float64)


def write_named_arrays(path, arrays):
    """Serialize an ordered mapping name -> float array into one file."""
    with open(path, "wb") as fh:
        fh.write(_U64.pack(len(arrays)))
        for name, arr in arrays.items():
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(_U64.pack(len(blob)))
            fh.write(blob)
            fh.write(_U64.pack(arr.ndim))
            for d in arr.shape:
                fh.write(_U64.pack(d))
            fh.write(arr.tobytes())


def read_named_arrays(path):
    raw = Path(path).read_bytes()
    pos = 0

    def u64():
        nonlocal pos
        if pos + 8 > len(raw):
            raise DataError(f"{path}: truncated")
        value = _U64.unpack_from(raw, pos)[0]
        pos += 8
        return value

    out = {}
    for _ in range(u64()):
        name_len = u64()
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        shape = tuple(u64() for _ in range(u64()))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
        if arr.size != count:
            raise DataError(f"{path}: truncated payload for {name!r}")
        pos += 8 * count
        out[name] = arr.reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise DataError(f"{path}: trailing bytes")
    return out


def read_flat_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment line."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def write_flat_config(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key in values:
            fh.write(f"{key} = {values[key]}\n")


# Named sub-streams keep every random component independently
# reproducible from the single run seed.
_STREAMS = {"init": 0, "train": 1, "negatives": 2, "sampler": 3, "data": 4, "heads": 5}


def substream(seed, name):
    """Deterministic per-component RNG derived from the run seed."""
    try:
        index = _STREAMS[name]
    except KeyError:
        raise UsageError(f"unknown random stream {name!r}") from None
    return np.random.default_rng(np.random.SeedSequence((int(seed), index)))

"""Weight-file format: magic "GGW1", length-prefixed JSON header, raw float32.

Header fields: format version, model-spec hash, dtype, and the ordered array
manifest (name + shape). Array data follows as little-endian float32 in
manifest order. Round trips are bit-exact for float32 models.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import GaitEncoder, spec_hash

MAGIC = b"GGW1"
FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    """Bad magic, unsupported version, or a truncated/garbled stream."""


class WeightShapeError(ValueError):
    """Checkpoint array incompatible with the model being loaded into."""


class SpecHashError(ValueError):
    """Checkpoint was written for a different model spec."""

    def __init__(self, expected: str, found: str):
        super().__init__(f"model spec hash mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


def save_weights(model: GaitEncoder) -> bytes:
    """Serialize all persistent model state to a GGW1 byte stream."""
    arrays = model.named_arrays()
    header = {
        "format": FORMAT_VERSION,
        "spec_hash": spec_hash(model.spec),
        "dtype": "float32",
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes]
    for _, arr in arrays:
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def load_weights(data: bytes, model: GaitEncoder) -> GaitEncoder:
    """Fill a model's arrays from a GGW1 stream, validating against its spec."""
    if len(data) < len(MAGIC) + 8:
        raise WeightFormatError("stream too short for GGW1 header")
    if data[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<Q", data[4:12])
    if 12 + header_len > len(data):
        raise WeightFormatError("truncated stream: header extends past end of data")
    try:
        header = json.loads(data[12:12 + header_len])
    except json.JSONDecodeError as exc:
        raise WeightFormatError(f"unreadable header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise WeightFormatError(f"unsupported format version {header.get('format')}")

    expected_hash = spec_hash(model.spec)
    found_hash = header.get("spec_hash", "")
    if found_hash != expected_hash:
        raise SpecHashError(expected=expected_hash, found=found_hash)

    model_arrays = dict(model.named_arrays())
    manifest = header["arrays"]
    manifest_names = [entry["name"] for entry in manifest]
    if set(manifest_names) != set(model_arrays):
        missing = sorted(set(model_arrays) - set(manifest_names))
        extra = sorted(set(manifest_names) - set(model_arrays))
        raise WeightShapeError(f"array set mismatch: missing {missing}, unexpected {extra}")

    offset = 12 + header_len
    for entry in manifest:
        name, shape = entry["name"], tuple(entry["shape"])
        target = model_arrays[name]
        if target.shape != shape:
            raise WeightShapeError(
                f"parameter {name!r}: checkpoint shape {shape} != model shape {target.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(data):
            raise WeightFormatError(f"truncated stream while reading {name!r}")
        values = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape, dtype=np.int64)),
                               offset=offset).reshape(shape)
        target[...] = values.astype(target.dtype)
        offset += nbytes
    if offset != len(data):
        raise WeightFormatError(f"{len(data) - offset} trailing bytes after last array")
    return model


def write_weights(model: GaitEncoder, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_weights(model))


def read_weights(path, model: GaitEncoder) -> GaitEncoder:
    with open(path, "rb") as fh:
        return load_weights(fh.read(), model)

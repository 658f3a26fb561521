"""Binary checkpoint container: magic, length-prefixed JSON header, raw arrays.

Layout:

    bytes 0..5    magic ``PROBS1``
    bytes 6..9    header length N (little-endian uint32)
    bytes 10..    UTF-8 JSON header; its ``arrays`` entry lists name, dtype
                  and shape of each array in file order
    then          the arrays' raw little-endian bytes, concatenated

Round trips are bit-exact; loads of damaged files raise `CheckpointError`
naming the byte offset where validation failed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"PROBS1"


class CheckpointError(Exception):
    """Raised when a checkpoint file cannot be parsed."""


def write_checkpoint(path, header: dict, arrays: Dict[str, np.ndarray]) -> None:
    """Write `header` plus named arrays to `path` (array order is preserved)."""
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(little).tobytes())
    full_header = dict(header)
    full_header["arrays"] = manifest
    encoded = json.dumps(full_header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read a checkpoint back as (header, arrays)."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated before header length (offset {len(data)})")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0 (expected {MAGIC!r})")
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if header_end > len(data):
        raise CheckpointError(f"{path}: truncated header at offset {len(data)} (need {header_end})")
    try:
        header = json.loads(data[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: invalid header JSON at offset {header_start}: {exc}") from exc
    manifest = header.pop("arrays", None)
    if manifest is None:
        raise CheckpointError(f"{path}: header at offset {header_start} lacks an 'arrays' entry")

    arrays: Dict[str, np.ndarray] = {}
    offset = header_end
    for entry in manifest:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if shape == ():
            nbytes = dtype.itemsize
        end = offset + nbytes
        if end > len(data):
            raise CheckpointError(
                f"{path}: array {entry['name']!r} truncated at offset {len(data)} (need {end})"
            )
        arr = np.frombuffer(data[offset:end], dtype=dtype).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.dtype(entry["dtype"]), copy=True)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    return header, arrays

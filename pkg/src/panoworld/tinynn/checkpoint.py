"""Checkpoint file format: JSON header + raw little-endian float arrays.

Layout: 8-byte little-endian header length, the UTF-8 JSON header, then
each tensor's raw bytes at the offsets recorded in the header (relative
to the end of the header), in header order.
"""

import json
import struct

import numpy as np

from ..errors import DataError

SCHEMA_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict = None) -> None:
    names = sorted(tensors)
    entries = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float64", "offset": offset}
        )
        offset += arr.nbytes
    header = json.dumps(
        {"schema_version": SCHEMA_VERSION, "tensors": entries, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in names:
            f.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (tensors dict, meta dict)."""
    try:
        with open(path, "rb") as f:
            head = f.read(8)
            if len(head) != 8:
                raise DataError(f"truncated checkpoint header in {path}")
            (hlen,) = struct.unpack("<Q", head)
            raw = f.read(hlen)
            if len(raw) != hlen:
                raise DataError(f"truncated checkpoint header in {path}")
            header = json.loads(raw.decode("utf-8"))
            payload = f.read()
    except (json.JSONDecodeError, UnicodeDecodeError, struct.error) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported checkpoint schema {header.get('schema_version')}")
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return tensors, header["meta"]

"""Versioned binary weight files.

Layout: 8-byte magic, little-endian ``u32`` format version, ``u32`` header
length, UTF-8 JSON header, then the raw little-endian arrays back to back.
The header records the model kind, architecture config, training metadata
(shape, seed, schedule, ...) and one ``{name, dtype, shape, offset}`` entry
per array.
"""

import json
import struct

import numpy as np

MAGIC = b"STGSANW\x00"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    pass


def save_weights(path, kind, meta, state):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_weights(path, expect_kind=None):
    """Return ``(kind, meta, state)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise WeightFileError(f"{path}: holds a {kind!r} model, expected {expect_kind!r}")
    body = memoryview(data)[16 + hlen:]
    state = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(body, dtype=dt, count=count, offset=e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
    return kind, header["meta"], state

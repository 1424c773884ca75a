"""Single-file checkpoint container.

Layout: the magic bytes EADK1, a little-endian u32 format version, a
little-endian u64 header length, the header as canonical JSON (sorted
keys, no whitespace), then the raw array payload. Arrays are float64
little-endian in C order, concatenated in header order, and the header
lists them sorted by name, so saving what load returned reproduces the
file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"EADK1"
VERSION = 1


def _canonical(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, arrays, meta):
    """Write arrays (name -> float64 ndarray) plus a JSON-safe meta dict."""
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.asarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "size": int(arr.size)})
        offset += arr.size * 8
    header = dict(meta)
    header["arrays"] = entries
    blob = _canonical(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            # tobytes serializes in C order regardless of input layout
            f.write(np.asarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays, meta); meta is the header without the array table."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hlen, = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    arrays = {}
    for entry in header.pop("arrays"):
        start, nbytes = entry["offset"], entry["size"] * 8
        chunk = payload[start:start + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"truncated array payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(
            entry["shape"]).copy()
    return arrays, header


def rng_state_to_json(rng):
    """bit_generator state as a JSON-safe structure (Python ints are
    arbitrary precision, so 128-bit state round-trips)."""
    return rng.bit_generator.state


def rng_from_json(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng

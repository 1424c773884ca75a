"""Binary netpbm I/O (P6 images, P5 label maps) and raw float64 grid dumps.

Images travel as (3,H,W) float arrays in [0,1]; labels as (H,W) int
arrays. The raw grid format is a single ASCII header line
``EAGRID1 c H W`` followed by little-endian float64 data in C order,
for cases where byte-quantized pixels are not enough.
"""

from __future__ import annotations

import numpy as np

_RAW_MAGIC = "EAGRID1"


def _read_pnm_header(f, magic):
    got = f.read(2)
    if got != magic:
        raise ValueError(f"expected {magic!r} file, found {got!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated pnm header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return w, h


def write_ppm(path, img):
    """Write a (3,H,W) float image in [0,1] as binary P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {img.shape}")
    byte = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[2], img.shape[1]))
        f.write(byte.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read binary P6 into a (3,H,W) float array in [0,1]."""
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, b"P6")
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise ValueError(f"truncated pixel data in {path}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, labels):
    """Write an (H,W) int label map as binary P5."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"expected (H,W) labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in a byte")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (labels.shape[1], labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        w, h = _read_pnm_header(f, b"P5")
        raw = f.read(w * h)
    if len(raw) != w * h:
        raise ValueError(f"truncated pixel data in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_raw_grid(path, grid):
    """Dump a (c,H,W) float64 grid losslessly."""
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"expected (c,H,W) grid, got {grid.shape}")
    c, h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"{_RAW_MAGIC} {c} {h} {w}\n".encode())
        f.write(grid.astype("<f8").tobytes())


def read_raw_grid(path):
    with open(path, "rb") as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != _RAW_MAGIC.encode():
            raise ValueError(f"not a {_RAW_MAGIC} file: {path}")
        c, h, w = (int(t) for t in header[1:])
        data = np.frombuffer(f.read(c * h * w * 8), dtype="<f8")
    if data.size != c * h * w:
        raise ValueError(f"truncated grid data in {path}")
    return data.reshape(c, h, w).copy()

"""Principal-component projection of adapter deltas for inspection.

The top three covariance directions of a token-by-channel matrix are
found by plain power iteration with deflation and rendered as an RGB
map over the token grid: one image each for the spatial, low-band, and
high-band expert deltas plus the routed mixture. Channels with no
variance render flat mid-gray so untrained adapters produce clean
placeholders instead of noise.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError
from .ppm import write_ppm

PCA_ITERS = 100
PCA_TOL = 1e-9
_FLAT_EPS = 1e-12


def power_iteration_pca(rows, k=3, iters=PCA_ITERS, tol=PCA_TOL):
    """Top-k covariance eigenpairs of (n,d) rows.

    Returns (components (k,d), eigenvalues (k,)). Components are unit
    length, mutually orthogonal, and sign-fixed so the entry of largest
    magnitude is positive. Directions beyond the data rank come out with
    eigenvalue ~0 and an arbitrary unit direction, which downstream
    rendering treats as flat.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    if k > d:
        raise ValueError(f"cannot extract {k} components from dim {d}")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / max(n, 1)
    comps = np.zeros((k, d))
    eigs = np.zeros(k)
    # slight tilt keeps the start vector from being orthogonal to the
    # leading eigenvector for symmetric inputs
    start = 1.0 + 1e-3 * np.arange(d)
    start /= np.linalg.norm(start)
    for j in range(k):
        v = start.copy()
        for _ in range(iters):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        lam = float(v @ cov @ v)
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        comps[j] = v
        eigs[j] = lam
        cov = cov - lam * np.outer(v, v)
    return comps, eigs


def render_projection(rows, comps, eigs, grid):
    """(3,grid,grid) image of rows projected on three components, each
    channel min-max normalized. A channel whose eigenvalue is negligible
    next to the leading one renders flat 0.5: past the data rank, the
    deflated matrix is pure round-off whose eigenvectors can still
    overlap the strong directions, so the projection itself looks like
    signal and only the eigenvalue exposes it as residue."""
    rows = np.asarray(rows, dtype=np.float64)
    centered = rows - rows.mean(axis=0)
    proj = centered @ comps.T  # (n,3)
    floor = _FLAT_EPS + 1e-9 * max(float(eigs[0]), 0.0)
    img = np.empty((3, grid, grid))
    for c in range(3):
        chan = proj[:, c]
        span = float(chan.max() - chan.min())
        if eigs[c] <= floor or span <= _FLAT_EPS:
            img[c] = 0.5
        else:
            img[c] = ((chan - chan.min()) / span).reshape(grid, grid)
    return img


def export_pca(model, image, layer, out_dir):
    """Write pca_{spatial,low,high,mixed}.ppm for one image and layer.

    Deltas are captured during a live forward pass, projected per kind,
    and upscaled to pixel resolution with nearest neighbor.
    """
    if model.moa is None:
        raise ConfigError("checkpoint has no adapter stack to inspect")
    if not (0 <= layer < len(model.moa.layers)) or \
            model.moa.layers[layer] is None:
        raise ConfigError(f"layer {layer} has no adapters")
    model.moa.capture = {}
    try:
        model.features(image)
        captured = model.moa.capture.get(layer, {})
    finally:
        model.moa.capture = None
    deltas = dict(captured.get("deltas", {}))
    deltas["mixed"] = captured["mixed"]
    grid = model.moa.layers[layer].grid
    patch = model.backbone.cfg.patch_size
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for kind in ("spatial", "low", "high", "mixed"):
        if kind not in deltas:
            continue
        comps, eigs = power_iteration_pca(deltas[kind])
        img = render_projection(deltas[kind], comps, eigs, grid)
        big = np.repeat(np.repeat(img, patch, axis=1), patch, axis=2)
        path = os.path.join(out_dir, f"pca_{kind}.ppm")
        write_ppm(path, big)
        written.append(path)
    return written

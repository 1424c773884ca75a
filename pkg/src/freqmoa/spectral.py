"""2D discrete Fourier transform and low/high frequency feature splitting.

Transforms are the row-column algorithm with precomputed complex DFT
matrices; grids at desk scale are small enough that nothing smarter is
needed. The zero-frequency bin of a ``Spectrum`` sits at the center
index (H//2, W//2).

``lowpass_op`` exposes the masked projection to the autodiff graph. The
projection matrix is real symmetric (Re(F* M F)/N^2 with M a symmetric
binary mask), so its adjoint is itself and the backward pass just
reapplies the projection to the incoming gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .errors import ShapeMismatchError, SpectralError

_IMAG_TOL = 1e-8

_dft_cache: dict[int, np.ndarray] = {}
_mask_cache: dict[tuple[int, float], np.ndarray] = {}


@dataclass
class Spectrum:
    """Center-shifted per-channel 2D spectrum of a (c,H,W) grid."""
    real: np.ndarray
    imag: np.ndarray


@dataclass
class FreqMask:
    """Binary low-frequency box mask with cutoff ``rho`` in [0,1]."""
    M: np.ndarray
    rho: float


def _dft_matrix(n):
    if n not in _dft_cache:
        k = np.arange(n)
        _dft_cache[n] = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return _dft_cache[n]


def _check_grid(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatchError(f"expected (c,H,W) grid, got shape {x.shape}")
    return x


def freq_mask(H, W, rho):
    """Centered box mask: 1 where max(|u-H/2|, |v-W/2|) <= rho*H/2."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"cutoff rho must lie in [0,1], got {rho}")
    if H != W:
        raise ShapeMismatchError(f"frequency mask requires a square grid, got {H}x{W}")
    cu, cv = H // 2, W // 2
    u = np.abs(np.arange(H) - cu)
    v = np.abs(np.arange(W) - cv)
    M = (np.maximum(u[:, None], v[None, :]) <= rho * H / 2.0).astype(np.float64)
    return FreqMask(M=M, rho=float(rho))


def _mask_unshifted(n, rho):
    key = (n, float(rho))
    if key not in _mask_cache:
        centered = freq_mask(n, n, rho).M
        _mask_cache[key] = np.roll(centered, (-(n // 2), -(n // 2)), axis=(0, 1))
    return _mask_cache[key]


def dft2d(x):
    """Per-channel 2D DFT of a (c,H,W) grid, center-shifted."""
    x = _check_grid(x)
    _, H, W = x.shape
    S = _dft_matrix(H) @ x.astype(np.complex128) @ _dft_matrix(W)
    S = np.roll(S, (H // 2, W // 2), axis=(1, 2))
    return Spectrum(real=np.ascontiguousarray(S.real),
                    imag=np.ascontiguousarray(S.imag))


def idft2d(s):
    """Inverse of ``dft2d``; rejects spectra whose inverse is not real."""
    S = np.asarray(s.real, dtype=np.float64) + 1j * np.asarray(s.imag, dtype=np.float64)
    if S.ndim != 3:
        raise ShapeMismatchError(f"expected (c,H,W) spectrum, got shape {S.shape}")
    _, H, W = S.shape
    S = np.roll(S, (-(H // 2), -(W // 2)), axis=(1, 2))
    y = np.conj(_dft_matrix(H)) @ S @ np.conj(_dft_matrix(W)) / (H * W)
    residue = np.abs(y.imag).max()
    if residue >= _IMAG_TOL:
        raise SpectralError(f"imaginary residue {residue:.3e} exceeds {_IMAG_TOL:.0e}")
    return np.ascontiguousarray(y.real)


def _project(x, rho, keep_low):
    c, H, W = x.shape
    if H != W:
        raise ShapeMismatchError(f"frequency split requires square grids, got {H}x{W}")
    M = _mask_unshifted(H, rho)
    if not keep_low:
        M = 1.0 - M
    F = _dft_matrix(H)
    S = (F @ x.astype(np.complex128) @ F) * M
    y = np.conj(F) @ S @ np.conj(F) / (H * W)
    residue = np.abs(y.imag).max()
    if residue >= _IMAG_TOL:
        raise SpectralError(f"imaginary residue {residue:.3e} exceeds {_IMAG_TOL:.0e}")
    return np.ascontiguousarray(y.real)


def split_frequency(x, rho):
    """Decompose a (c,H,W) grid into (low, high) at cutoff ``rho``.

    low = IFT(M . FT(x)), high = IFT((1-M) . FT(x)); the two parts sum
    back to x. A full-pass mask short-circuits so the identity is exact.
    """
    x = _check_grid(x)
    _, H, W = x.shape
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"cutoff rho must lie in [0,1], got {rho}")
    if H != W:
        raise ShapeMismatchError(f"frequency split requires square grids, got {H}x{W}")
    if _mask_unshifted(H, rho).all():
        return x.copy(), np.zeros_like(x)
    return _project(x, rho, True), _project(x, rho, False)


def lowpass_op(x, rho):
    """Autodiff low-frequency projection of a (c,H,W) tensor.

    The projection is a constant self-adjoint linear map, so backward
    applies the identical projection to the incoming gradient. The high
    part is recovered exactly as ``x - lowpass_op(x, rho)``.
    """
    data = x.data
    if data.ndim != 3:
        raise ShapeMismatchError(f"expected (c,H,W) tensor, got shape {data.shape}")
    _, H, W = data.shape
    if H != W:
        raise ShapeMismatchError(f"frequency split requires square grids, got {H}x{W}")
    if _mask_unshifted(H, rho).all():
        out_data = data.copy()

        def backward(g):
            autodiff._accumulate(x, g)
    else:
        out_data = _project(data, rho, True)

        def backward(g):
            autodiff._accumulate(x, _project(g, rho, True))

    return autodiff._make(out_data, (x,), backward)

"""Circular convolution / correlation and doubly block circulant matrices.

Convolution follows ``(X * K)[i, j] = sum_{m,l} X[m, l] K[i - m, j - l]`` with
indices taken modulo ``n``.  Correlation is ``sum_{m,l} X[i + m, j + l] K[m, l]``,
which is convolution with the 180-degree rotated kernel.
"""
from __future__ import annotations

import numpy as np

from .spectral import side_length, vec2d_dft

#: Default largest ``n`` for which the dense ``n^2 x n^2`` dbc matrix is built.
DBC_CAP = 16

CONVOLUTION = "convolution"
CORRELATION = "correlation"


def _as_image(a, name="array") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        n = side_length(a.size)
        return a.reshape(n, n)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square image or its vectorization")
    return a


def _check_pair(X, K):
    X = _as_image(X, "X")
    K = _as_image(K, "K")
    if X.shape != K.shape:
        raise ValueError(f"dimension mismatch: image {X.shape} vs kernel {K.shape}")
    return X, K


def _real_if_real(out, *inputs):
    if all(np.isrealobj(a) for a in inputs):
        return out.real
    return out


def circ_conv(X, K) -> np.ndarray:
    """Circular convolution of two ``n x n`` arrays, returned as an ``n x n`` array."""
    X, K = _check_pair(X, K)
    out = np.fft.ifft2(np.fft.fft2(X) * np.fft.fft2(K))
    return _real_if_real(out, X, K)


def circ_corr(X, K) -> np.ndarray:
    """Circular correlation, ``circ_conv(X, flip_kernel(K))``."""
    X, K = _check_pair(X, K)
    out = np.fft.ifft2(np.fft.fft2(X) * np.fft.fft2(flip_image(K)))
    return _real_if_real(out, X, K)


def flip_image(K) -> np.ndarray:
    """Rotate by 180 degrees with wrap-around: ``K[l, m] -> K[-l % n, -m % n]``."""
    K = _as_image(K)
    return np.roll(K[::-1, ::-1], 1, axis=(0, 1))


def flip_kernel(k) -> np.ndarray:
    """Vectorized form of :func:`flip_image`; equals ``Q Q k``."""
    k = np.asarray(k)
    return flip_image(k).ravel()


def _circ(b: np.ndarray) -> np.ndarray:
    q = b.shape[0]
    r = np.arange(q)
    return b[(r[:, None] - r[None, :]) % q]


def materialize_dbc(K, variant: str = CONVOLUTION, cap: int = DBC_CAP) -> np.ndarray:
    """Dense doubly block circulant matrix acting on row-major vectorized images.

    For ``variant="convolution"`` block ``(r, c)`` is ``circ(K[(r - c) % n])``;
    for ``"correlation"`` it is built from the flipped kernel.
    """
    K = _as_image(K, "K")
    n = K.shape[0]
    if n > cap:
        raise ValueError(f"dbc materialization capped at n={cap} (got n={n})")
    if variant == CORRELATION:
        K = flip_image(K)
    elif variant != CONVOLUTION:
        raise ValueError(f"unknown variant {variant!r}")
    blocks = [_circ(K[i]) for i in range(n)]
    r = np.arange(n)
    layout = (r[:, None] - r[None, :]) % n
    return np.block([[blocks[layout[a, b]] for b in range(n)] for a in range(n)])


def dbc_singular_values(K) -> np.ndarray:
    """``n |Q k|`` indexed by frequency (not sorted)."""
    K = _as_image(K, "K")
    return K.shape[0] * vec2d_dft(K).magnitude

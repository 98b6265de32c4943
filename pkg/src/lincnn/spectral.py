"""Vectorized 2D discrete Fourier transform and frequency bookkeeping.

Images are vectorized by stacking rows, so pixel ``(l, m)`` of an ``n x n``
image lives at position ``l * n + m``.  The same row-major rule indexes
frequencies: the pair ``(mu, nu)`` maps to ``j = n * mu + nu``.

The transform matrix is ``Q = (1/n) F kron F`` with ``F[p, q] = exp(-2 pi i pq / n)``.
It is unitary and symmetric, and ``Q x`` equals ``fft2(X).ravel() / n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Largest side length for which ``dft_matrix`` will build the dense ``n^2 x n^2`` matrix.
MATERIALIZATION_CAP = 64


def side_length(size: int) -> int:
    """Return ``n`` such that ``n * n == size``; raise if ``size`` is not a square."""
    n = int(round(np.sqrt(size)))
    if n < 1 or n * n != size:
        raise ValueError(f"length {size} is not a perfect square")
    return n


@dataclass(frozen=True)
class FreqIndex:
    """A vec-2D frequency index ``j`` together with its 2D pair ``(mu, nu)``."""

    j: int
    mu: int
    nu: int
    n: int

    def symm(self) -> "FreqIndex":
        return symm_index(self)

    @property
    def self_symmetric(self) -> bool:
        return symm_index(self).j == self.j


def freq_index(mu: int, nu: int, n: int) -> FreqIndex:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0 <= mu < n and 0 <= nu < n):
        raise ValueError(f"frequency pair ({mu}, {nu}) out of range for n={n}")
    return FreqIndex(j=n * mu + nu, mu=mu, nu=nu, n=n)


def freq_from_j(j: int, n: int) -> FreqIndex:
    if not 0 <= j < n * n:
        raise ValueError(f"index {j} out of range for n={n}")
    return FreqIndex(j=j, mu=j // n, nu=j % n, n=n)


def symm_index(f: FreqIndex) -> FreqIndex:
    """Index of the conjugate-partner frequency ``((n - mu) % n, (n - nu) % n)``."""
    return freq_index((f.n - f.mu) % f.n, (f.n - f.nu) % f.n, f.n)


def symm_permutation(n: int) -> np.ndarray:
    """Array ``s`` with ``s[j] = symm(j)`` for every vec-2D index."""
    idx = np.arange(n)
    neg = (-idx) % n
    return (neg[:, None] * n + neg[None, :]).ravel()


def dft_matrix(n: int, cap: int = MATERIALIZATION_CAP) -> np.ndarray:
    """Dense ``Q = (1/n) F kron F``.  Only meant for cross-checks at small ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > cap:
        raise ValueError(f"refusing to materialize Q for n={n} (cap {cap}); use vec2d_dft")
    k = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.kron(F, F) / n


@dataclass(frozen=True)
class Spectrum:
    """Vec-2D Fourier coefficients of an ``n x n`` image."""

    coeffs: np.ndarray
    n: int

    def __post_init__(self):
        if self.coeffs.shape != (self.n * self.n,):
            raise ValueError("coeffs must have length n^2")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def as_image(self) -> np.ndarray:
        return self.coeffs.reshape(self.n, self.n)

    def __getitem__(self, j):
        return self.coeffs[j]


def vec2d_dft(x) -> Spectrum:
    """``Q x`` computed with a 2D FFT on the reshaped image."""
    x = np.asarray(x)
    if x.ndim == 2:
        if x.shape[0] != x.shape[1]:
            raise ValueError("image must be square")
        X = x
    elif x.ndim == 1:
        n = side_length(x.size)
        X = x.reshape(n, n)
    else:
        raise ValueError("expected a vector or a square image")
    n = X.shape[0]
    return Spectrum(np.fft.fft2(X, norm="ortho").ravel(), n)


def inv_vec2d_dft(s: Spectrum | np.ndarray) -> np.ndarray:
    """``Q^{-1} s``; returns a complex vector of length ``n^2``."""
    coeffs = s.coeffs if isinstance(s, Spectrum) else np.asarray(s)
    n = side_length(coeffs.size)
    return np.fft.ifft2(coeffs.reshape(n, n), norm="ortho").ravel()


def vec2d_dft_rows(M: np.ndarray) -> np.ndarray:
    """Apply ``Q`` to every row of ``M`` (shape ``(r, n^2)``), i.e. ``M Q^T = M Q``."""
    M = np.asarray(M)
    n = side_length(M.shape[-1])
    return np.fft.fft2(M.reshape(M.shape[:-1] + (n, n)), norm="ortho").reshape(M.shape)


def is_conjugate_symmetric(coeffs: np.ndarray, atol: float = 1e-12) -> bool:
    coeffs = np.asarray(coeffs)
    perm = symm_permutation(side_length(coeffs.size))
    return bool(np.allclose(coeffs[perm], np.conj(coeffs), atol=atol, rtol=0))


def wrap_angle(theta):
    """Map angles to ``(-pi, pi]``."""
    theta = np.asarray(theta, dtype=float)
    out = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return np.where(out <= -np.pi, out + 2 * np.pi, out)

"""Synthetic datasets, correlation statistics and the SVD of the input-output map."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectral import freq_index, side_length, symm_index, vec2d_dft

#: Side length above which ``sigma_xx`` returns an operator instead of a dense matrix.
DENSE_SIGMA_XX_MAX_N = 16
#: Hard cap for building a dense ``n^2 x n^2`` input correlation matrix.
SIGMA_XX_CAP = 64
#: Relative gap below which neighbouring singular values count as degenerate.
DEGENERATE_GAP = 1e-6


@dataclass(frozen=True)
class Dataset:
    """Labelled ``n x n`` images.  Arrays are made read-only on construction."""

    images: np.ndarray  # (N, n, n) float64
    labels: np.ndarray  # (N,) int
    p: int
    name: str = ""

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if images.ndim != 3 or images.shape[1] != images.shape[2]:
            raise ValueError("images must have shape (N, n, n)")
        if labels.shape != (images.shape[0],):
            raise ValueError("one label per image required")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if images.shape[0] == 0:
            raise ValueError("dataset is empty")
        if labels.min() < 0 or labels.max() >= self.p:
            raise ValueError(f"class index out of range [0, {self.p})")
        counts = np.bincount(labels, minlength=self.p)
        if np.any(counts == 0):
            raise ValueError(f"every class needs at least one sample (counts {counts.tolist()})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.images.shape[1]

    @property
    def N(self) -> int:
        return self.images.shape[0]

    @property
    def X(self) -> np.ndarray:
        """Vectorized samples, shape ``(N, n^2)``."""
        return self.images.reshape(self.N, -1)

    @property
    def Y(self) -> np.ndarray:
        """One-hot labels, shape ``(N, p)``."""
        return np.eye(self.p)[self.labels]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.p)

    @property
    def balanced(self) -> bool:
        c = self.class_counts
        return bool(np.all(c == c[0]))

    def class_means(self) -> np.ndarray:
        return np.stack([self.X[self.labels == c].mean(axis=0) for c in range(self.p)])


# ---------------------------------------------------------------- generators


@dataclass(frozen=True)
class CosineTerm:
    mu: int
    nu: int
    amplitude: float = 1.0
    phase: float = 0.0


@dataclass(frozen=True)
class CosineSpec:
    """Per-class lists of cosine terms on an ``n x n`` grid."""

    n: int
    classes: tuple
    disjoint: bool = True

    def __post_init__(self):
        classes = tuple(tuple(CosineTerm(*t) if not isinstance(t, CosineTerm) else t for t in c)
                        for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if not classes or any(len(c) == 0 for c in classes):
            raise ValueError("every class needs at least one cosine term")
        for c in classes:
            for t in c:
                freq_index(t.mu, t.nu, self.n)  # range check
        owner = {}
        for ci, c in enumerate(classes):
            mine = set()
            for t in c:
                f = freq_index(t.mu, t.nu, self.n)
                pair = {f.j, symm_index(f).j}
                if pair & mine:
                    raise ValueError(f"frequency ({t.mu}, {t.nu}) repeated within class {ci}")
                mine |= pair
            for j in mine:
                if self.disjoint and j in owner:
                    raise ValueError(f"frequency index {j} shared by classes {owner[j]} and {ci}")
                owner[j] = ci

    @property
    def p(self) -> int:
        return len(self.classes)

    def class_frequencies(self, c: int) -> list[int]:
        """Vec-2D indices of class ``c`` including conjugate partners (sorted)."""
        js = set()
        for t in self.classes[c]:
            f = freq_index(t.mu, t.nu, self.n)
            js.update({f.j, symm_index(f).j})
        return sorted(js)

    @classmethod
    def pure(cls, n, pairs, amplitudes, phases=None):
        phases = phases if phases is not None else [0.0] * len(pairs)
        return cls(n, tuple(((mu, nu, b, d),) for (mu, nu), b, d in zip(pairs, amplitudes, phases)))


def cosine_image(n: int, terms: Sequence[CosineTerm]) -> np.ndarray:
    l = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    X = np.zeros((n, n))
    for t in terms:
        X += t.amplitude * np.cos(2 * np.pi * (t.mu * l + t.nu * m) / n + t.phase)
    return X


def gen_sums_of_cosines(spec: CosineSpec) -> Dataset:
    """One image per class, each a sum of 2D cosines."""
    images = np.stack([cosine_image(spec.n, c) for c in spec.classes])
    return Dataset(images, np.arange(spec.p), spec.p, name="sums-of-cosines")


def gen_pure_cosines(spec: CosineSpec) -> Dataset:
    """One image per class made of a single cosine ``b cos(2 pi (mu l + nu m) / n)``."""
    if any(len(c) != 1 for c in spec.classes):
        raise ValueError("pure cosines need exactly one frequency per class")
    d = gen_sums_of_cosines(spec)
    return Dataset(d.images, d.labels, d.p, name="pure-cosines")


def pure_cosines_default() -> CosineSpec:
    """The 16x16 four-class pure cosine setup used for the sigmoid experiment."""
    return CosineSpec.pure(16, [(0, 0), (5, 2), (1, 7), (0, 4)], [1.5, 1.0, 0.5, 0.2])


def sums_of_cosines_default() -> CosineSpec:
    """Two classes, two cosines each, with one clearly dominant amplitude per class.

    Both modes are usually discovered within 600 samples at learning rate 1e-4; a slow seed can need about 750.
    """
    return CosineSpec(64, (
        ((3, 5, 0.3, 0.0), (7, 2, 0.15, 0.0)),
        ((1, 9, 0.225, 0.0), (5, 12, 0.1, 0.0)),
    ))


SHAPES = ("circle", "octagon", "square", "star")


def _inside_polygon(x, y, vx, vy):
    """Even-odd rule point-in-polygon for arrays of points."""
    inside = np.zeros(x.shape, dtype=bool)
    k = len(vx)
    for i in range(k):
        x0, y0, x1, y1 = vx[i], vy[i], vx[(i + 1) % k], vy[(i + 1) % k]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xint)
    return inside


def rasterize_shape(kind: str, n: int, diameter: float = 0.7) -> np.ndarray:
    """Binary filled shape centred in an ``n x n`` image, circumscribed diameter ``diameter * n``."""
    c = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    x, y = xx - c, c - yy
    R = diameter * n / 2
    if kind == "circle":
        mask = x ** 2 + y ** 2 <= R ** 2
    elif kind in ("octagon", "square"):
        k = 8 if kind == "octagon" else 4
        ang = np.pi / k + 2 * np.pi * np.arange(k) / k  # flat edges axis-aligned
        mask = _inside_polygon(x, y, R * np.cos(ang), R * np.sin(ang))
    elif kind == "star":
        ang = np.pi / 2 + np.pi * np.arange(10) / 5
        r = np.where(np.arange(10) % 2 == 0, R, R * 0.381966)  # regular pentagram
        mask = _inside_polygon(x, y, r * np.cos(ang), r * np.sin(ang))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return mask.astype(np.float64)


def gen_geometric_shapes(n: int = 64, diameter: float = 0.7) -> Dataset:
    """Circle, octagon, square and star; one binary image per class."""
    if n < 16:
        raise ValueError("geometric shapes need n >= 16")
    images = np.stack([rasterize_shape(k, n, diameter) for k in SHAPES])
    return Dataset(images, np.arange(4), 4, name="geometric-shapes")


# -------------------------------------------------------------- statistics


def sigma_yx(d: Dataset) -> np.ndarray:
    """``<y x^T>`` averaged over all samples, shape ``(p, n^2)``."""
    return d.Y.T @ d.X / d.N


class SampleCorrelation:
    """``Sigma^xx = <x x^T>`` represented through its samples."""

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X, dtype=np.float64)
        self.shape = (self.X.shape[1], self.X.shape[1])

    def matvec(self, v):
        return self.X.T @ (self.X @ v) / self.X.shape[0]

    def project(self, B: np.ndarray) -> np.ndarray:
        """``B Sigma B^T`` for row vectors ``B`` (shape ``(r, n^2)``)."""
        XB = self.X @ np.asarray(B).T
        return XB.T @ XB / self.X.shape[0]

    def todense(self) -> np.ndarray:
        if side_length(self.shape[0]) > SIGMA_XX_CAP:
            raise ValueError("dense Sigma^xx capped at n=64")
        return self.X.T @ self.X / self.X.shape[0]


def sigma_xx(d: Dataset, dense: bool | None = None):
    """Input correlation; dense ``n^2 x n^2`` array for small ``n``, else an operator."""
    op = SampleCorrelation(d.X)
    if dense is None:
        dense = d.n <= DENSE_SIGMA_XX_MAX_N
    return op.todense() if dense else op


def _project(sxx, B):
    if isinstance(sxx, SampleCorrelation):
        return sxx.project(B)
    sxx = np.asarray(sxx)
    return B @ sxx @ B.T


@dataclass(frozen=True)
class SvdStructure:
    """SVD of ``Sigma^yx`` plus the diagonal of ``Sigma^xx`` in the right singular basis."""

    U: np.ndarray  # (p, p)
    s: np.ndarray  # (p,) descending
    phi: np.ndarray  # (p, n^2); row alpha is phi^alpha
    sigma_xx_diag: np.ndarray  # (p,)
    residual: float  # max |off-diagonal| of phi Sigma^xx phi^T
    degenerate: tuple = field(default=())  # index pairs with (nearly) equal s

    @property
    def p(self) -> int:
        return self.s.shape[0]

    @property
    def n(self) -> int:
        return side_length(self.phi.shape[1])

    def modes(self) -> np.ndarray:
        """Rank-one modes ``s_a U[:, a] phi^a^T``, shape ``(p, p, n^2)``."""
        return self.s[:, None, None] * self.U.T[:, :, None] * self.phi[:, None, :]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.phi

    def phi_spectra(self) -> np.ndarray:
        """``Q phi^a`` for every mode, shape ``(p, n^2)`` complex."""
        from .spectral import vec2d_dft_rows
        return vec2d_dft_rows(self.phi)


def _fix_signs(U, Vt):
    for a in range(Vt.shape[0]):
        v = Vt[a]
        mag = np.abs(v)
        i = int(np.argmax(mag >= mag.max() * (1 - 1e-9)))
        if v[i] < 0:
            Vt[a] = -v
            U[:, a] = -U[:, a]
    return U, Vt


def svd_structure(syx: np.ndarray, sxx=None) -> SvdStructure:
    """SVD of ``Sigma^yx`` and the projected input correlation.

    Signs are fixed so that the largest-magnitude entry of each ``phi^a`` is positive.
    ``sxx`` may be a dense matrix, a :class:`SampleCorrelation` or ``None``.
    """
    syx = np.asarray(syx, dtype=np.float64)
    p, n2 = syx.shape
    if p > n2:
        raise ValueError("expected p <= n^2")
    U, s, Vt = np.linalg.svd(syx, full_matrices=False)
    U, Vt = _fix_signs(U.copy(), Vt.copy())
    if sxx is not None:
        P = _project(sxx, Vt)
        diag = np.diag(P).copy()
        off = P - np.diag(diag)
        residual = float(np.abs(off).max()) if p > 1 else 0.0
    else:
        diag = np.full(p, np.nan)
        residual = float("nan")
    degenerate = tuple((a, a + 1) for a in range(p - 1)
                       if abs(s[a] - s[a + 1]) < DEGENERATE_GAP * max(s[0], 1e-300))
    return SvdStructure(U, s, Vt, diag, residual, degenerate)


def dataset_svd(d: Dataset) -> SvdStructure:
    return svd_structure(sigma_yx(d), SampleCorrelation(d.X))


def sigma_yhat_x(predictions, inputs) -> np.ndarray:
    """``<y_hat x^T>`` from ``(N, p)`` predictions and ``(N, n^2)`` inputs."""
    Yh = np.asarray(predictions, dtype=np.float64)
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if Yh.ndim != 2 or X.ndim != 2 or Yh.shape[0] != X.shape[0]:
        raise ValueError(f"shape mismatch: predictions {Yh.shape}, inputs {X.shape}")
    return Yh.T @ X / X.shape[0]


def effective_A(syhx: np.ndarray, svd: SvdStructure, return_spillover: bool = False):
    """``A = U^T Sigma^yhat-x V`` restricted to the first ``p`` right singular vectors.

    With ``return_spillover`` also returns the Frobenius norm of the part of
    ``U^T Sigma^yhat-x`` lying outside ``span(phi)``.
    """
    syhx = np.asarray(syhx)
    if syhx.shape != (svd.p, svd.phi.shape[1]):
        raise ValueError(f"expected shape {(svd.p, svd.phi.shape[1])}, got {syhx.shape}")
    B = svd.U.T @ syhx
    A = B @ svd.phi.T
    if not return_spillover:
        return A
    return A, float(np.linalg.norm(B - A @ svd.phi))


def shuffle_split(d: Dataset, test_fraction: float, seed: int):
    """Seeded per-class split into ``(train, test)``."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(d.p):
        idx = rng.permutation(np.flatnonzero(d.labels == c))
        k = int(round(len(idx) * test_fraction))
        if k >= len(idx):
            raise ValueError(f"class {c} too small to split")
        test_idx.extend(idx[:k])
        train_idx.extend(idx[k:])
    tr, te = np.sort(train_idx), np.sort(test_idx)
    return (Dataset(d.images[tr], d.labels[tr], d.p, d.name),
            Dataset(d.images[te], d.labels[te], d.p, d.name) if len(te) else None)


# ---------------------------------------------------------------------- IO

MAGIC = b"LCNNDS\x00\x00"
VERSION = 1
_HEADER = struct.Struct("<8sHIII")  # magic, version, n, p, N


class DatasetFormatError(ValueError):
    pass


def save_dataset(d: Dataset, path) -> None:
    """Binary layout: header, row-major float64 images, uint16 labels (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d.n, d.p, d.N))
        fh.write(np.ascontiguousarray(d.images, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(d.labels, dtype="<u2").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file too short for header")
    magic, version, n, p, N = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError("bad magic")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if p == 0:
        raise DatasetFormatError("p must be >= 1")
    if n == 0 or N == 0:
        raise DatasetFormatError("empty dataset")
    img_bytes = N * n * n * 8
    expected = _HEADER.size + img_bytes + N * 2
    if len(raw) != expected:
        raise DatasetFormatError(f"payload size {len(raw)} != expected {expected}")
    images = np.frombuffer(raw, dtype="<f8", count=N * n * n, offset=_HEADER.size).reshape(N, n, n)
    labels = np.frombuffer(raw, dtype="<u2", count=N, offset=_HEADER.size + img_bytes)
    if labels.max() >= p:
        raise DatasetFormatError(f"class index {int(labels.max())} >= p={p}")
    try:
        return Dataset(images.astype(np.float64), labels.astype(np.int64), int(p))
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc


def dataset_to_csv(d: Dataset, path) -> None:
    """One row per sample: class label followed by the ``n^2`` pixel values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class"] + [f"x{i}" for i in range(d.n * d.n)])
        for c, x in zip(d.labels, d.X):
            w.writerow([int(c)] + [repr(float(v)) for v in x])


def spectrum_support(x, rel_tol: float = 1e-8) -> list[int]:
    mag = vec2d_dft(x).magnitude
    return np.flatnonzero(mag > rel_tol * mag.max()).tolist()


def mode_frequency_sets(svd: SvdStructure, rel_tol: float = 1e-6) -> list[list[int]]:
    """Frequency indices where ``|Q phi^a|`` is non-negligible, per mode (conjugate-closed)."""
    mags = np.abs(svd.phi_spectra())
    return [np.flatnonzero(m > rel_tol * m.max()).tolist() for m in mags]


def frequency_sets_disjoint(supports) -> bool:
    seen = set()
    for sup in supports:
        if seen & set(sup):
            return False
        seen |= set(sup)
    return True

"""Two-layer linear CNN and its fully connected baseline, trained one sample at a time.

CNN predictions are ``y_hat = W dbc(K) x``: a single ``n x n`` kernel applied by
circular convolution, followed by a ``p x n^2`` fully connected layer.  The FCNN
baseline is ``y_hat = W2 W1 x`` with a hidden layer of width ``n^2``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convops import circ_conv, flip_image
from .datasets import (CosineSpec, Dataset, SvdStructure, effective_A, mode_frequency_sets,
                       sigma_yhat_x)
from .spectral import side_length, vec2d_dft, vec2d_dft_rows

LOSS_MODES = ("theory", "framework")
SAMPLING_POLICIES = ("random", "shuffle")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; ``stream`` selects an independent substream."""
    bitgen = np.random.Philox(key=int(seed))
    if stream:
        bitgen = bitgen.jumped(stream)
    return np.random.Generator(bitgen)


# -------------------------------------------------------------------- state


@dataclass
class CnnState:
    kernel: np.ndarray  # (n^2,) vectorized kernel
    W: np.ndarray  # (p, n^2)
    t: int = 0

    def __post_init__(self):
        self.kernel = np.array(self.kernel, dtype=np.float64).ravel()
        self.W = np.array(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[1] != self.kernel.size:
            raise ValueError(f"W must be (p, n^2); got {self.W.shape} for kernel of size {self.kernel.size}")

    @property
    def n(self) -> int:
        return side_length(self.kernel.size)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> np.ndarray:
        return self.kernel.reshape(self.n, self.n)

    def copy(self) -> "CnnState":
        return CnnState(self.kernel.copy(), self.W.copy(), self.t)

    def kernel_spectrum(self) -> np.ndarray:
        return vec2d_dft(self.kernel).coeffs

    def digest(self) -> str:
        h = hashlib.sha256(b"cnn")
        h.update(struct.pack("<III", self.n, self.p, self.t))
        h.update(self.kernel.tobytes())
        h.update(self.W.tobytes())
        return h.hexdigest()


@dataclass
class FcnnState:
    W1: np.ndarray  # (hidden, n^2)
    W2: np.ndarray  # (p, hidden)
    t: int = 0

    def __post_init__(self):
        self.W1 = np.array(self.W1, dtype=np.float64)
        self.W2 = np.array(self.W2, dtype=np.float64)
        if self.W1.shape[0] != self.W2.shape[1]:
            raise ValueError("hidden widths of W1 and W2 differ")
        side_length(self.W1.shape[1])

    @property
    def n(self) -> int:
        return side_length(self.W1.shape[1])

    @property
    def p(self) -> int:
        return self.W2.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def copy(self) -> "FcnnState":
        return FcnnState(self.W1.copy(), self.W2.copy(), self.t)

    def digest(self) -> str:
        h = hashlib.sha256(b"fcnn")
        h.update(struct.pack("<IIII", self.n, self.p, self.hidden, self.t))
        h.update(self.W1.tobytes())
        h.update(self.W2.tobytes())
        return h.hexdigest()


# ----------------------------------------------------------- forward / loss


def _image(x, n):
    x = np.asarray(x, dtype=np.float64)
    if x.size != n * n:
        raise ValueError(f"input of size {x.size} does not match n={n}")
    return x.reshape(n, n)


def cnn_forward(state: CnnState, x):
    """Return ``(y_hat, h)`` with hidden activity ``h = vec(X * K)``."""
    X = _image(x, state.n)
    h = circ_conv(X, state.K).ravel()
    return state.W @ h, h


def fcnn_forward(state: FcnnState, x):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != state.W1.shape[1]:
        raise ValueError("input size mismatch")
    h = state.W1 @ x
    return state.W2 @ h, h


def loss_grad_scale(mode: str, p: int) -> float:
    """``dL/dy_hat = scale * (y_hat - y)`` for the chosen loss normalization."""
    if mode == "theory":
        return 1.0
    if mode == "framework":
        return 2.0 / p
    raise ValueError(f"unknown loss mode {mode!r}")


def mse_loss(y, y_hat, mode: str = "theory") -> float:
    """``0.5 * sum (y - y_hat)^2`` (theory) or ``(1/p) * sum (y - y_hat)^2`` (framework)."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError("y and y_hat differ in shape")
    sq = float(np.sum((y - y_hat) ** 2))
    if mode == "theory":
        return 0.5 * sq
    if mode == "framework":
        return sq / y.size
    raise ValueError(f"unknown loss mode {mode!r}")


def theory_learning_rate(lr_framework: float, p: int) -> float:
    """Learning rate under the ``0.5 * sum`` loss equivalent to ``lr_framework`` under ``(1/p) * sum``."""
    return 2.0 * lr_framework / p


def cnn_gradients(state: CnnState, x, y, mode: str = "theory"):
    """Exact ``(dL/dk, dL/dW)`` for one sample.

    The kernel gradient is a convolution of the flipped image with the
    back-propagated hidden error ``W^T (y_hat - y)``.
    """
    X = _image(x, state.n)
    y_hat, h = cnn_forward(state, X)
    e = loss_grad_scale(mode, state.p) * (y_hat - np.asarray(y, dtype=np.float64))
    g_h = (state.W.T @ e).reshape(state.n, state.n)
    gk = circ_conv(flip_image(X), g_h).ravel()
    gW = np.outer(e, h)
    return gk, gW


def fcnn_gradients(state: FcnnState, x, y, mode: str = "theory"):
    x = np.asarray(x, dtype=np.float64).ravel()
    y_hat, h = fcnn_forward(state, x)
    e = loss_grad_scale(mode, state.p) * (y_hat - np.asarray(y, dtype=np.float64))
    gW1 = np.outer(state.W2.T @ e, x)
    gW2 = np.outer(e, h)
    return gW1, gW2


# ----------------------------------------------------------- initialization


def init_random_cnn(n: int, p: int, sigma: float, seed: int) -> CnnState:
    """Kernel and weights i.i.d. ``N(0, sigma^2)``."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    rng = make_rng(seed)
    kernel = rng.normal(0.0, sigma, n * n)
    W = rng.normal(0.0, sigma, (p, n * n))
    return CnnState(kernel, W)


def init_random_fcnn(n: int, p: int, sigma: float, seed: int, hidden: int | None = None) -> FcnnState:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    hidden = n * n if hidden is None else hidden
    rng = make_rng(seed)
    W1 = rng.normal(0.0, sigma, (hidden, n * n))
    W2 = rng.normal(0.0, sigma, (p, hidden))
    return FcnnState(W1, W2)


def init_random(model: str, n: int, p: int, sigma: float, seed: int):
    if model == "cnn":
        return init_random_cnn(n, p, sigma, seed)
    if model == "fcnn":
        return init_random_fcnn(n, p, sigma, seed)
    raise ValueError(f"unknown model {model!r}")


def _check_supports_against_spec(supports, spec: CosineSpec):
    class_sets = [frozenset(spec.class_frequencies(c)) for c in range(spec.p)]
    for a, sup in enumerate(supports):
        if frozenset(sup) not in class_sets:
            raise ValueError(f"mode {a} frequency set {sorted(sup)} matches no cosine class")


def balanced_weights(kernel: np.ndarray, svd: SvdStructure, supports) -> np.ndarray:
    """``W = U Omega Theta_w Q`` for the given kernel (phases aligned with the data)."""
    qk = vec2d_dft(kernel).coeffs
    qphi = svd.phi_spectra()
    n2 = kernel.size
    Wbar = np.zeros((svd.p, n2), dtype=complex)
    for a, sup in enumerate(supports):
        sup = np.asarray(sup, dtype=int)
        delta_w = -np.angle(qphi[a, sup]) - np.angle(qk[sup])
        Wbar[a, sup] = np.abs(qk[sup]) * np.exp(1j * delta_w)
    W = svd.U @ vec2d_dft_rows(Wbar)
    if np.abs(W.imag).max() > 1e-9 * max(np.abs(W.real).max(), 1e-300):
        raise ArithmeticError("balanced weight matrix is not real; frequency sets not conjugate-closed")
    return W.real.copy()


def init_aligned_balanced(svd: SvdStructure, spec: CosineSpec | None, sigma: float, seed: int,
                          supports=None) -> CnnState:
    """Small random kernel plus weights that make ``A`` diagonal and positive from the start."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if supports is None:
        supports = mode_frequency_sets(svd)
    if spec is not None:
        if not spec.disjoint:
            raise ValueError("aligned-balanced init needs disjoint frequency sets")
        _check_supports_against_spec(supports, spec)
    rng = make_rng(seed)
    kernel = rng.normal(0.0, sigma, svd.phi.shape[1])
    return CnnState(kernel, balanced_weights(kernel, svd, supports))


def init_aligned_fcnn(svd: SvdStructure, a_init, hidden: int | None = None) -> FcnnState:
    """FCNN whose first ``p`` transformed diagonal entries equal ``sqrt(a_init / Sigma_bar)``."""
    p, n2 = svd.phi.shape
    hidden = n2 if hidden is None else hidden
    if hidden < p:
        raise ValueError("hidden layer narrower than p")
    w = np.sqrt(np.asarray(a_init, dtype=np.float64) / svd.sigma_xx_diag)
    W1 = np.zeros((hidden, n2))
    W1[:p] = w[:, None] * svd.phi
    W2 = np.zeros((p, hidden))
    W2[:, :p] = svd.U * w
    return FcnnState(W1, W2)


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    lr: float
    updates: int
    loss_mode: str = "theory"
    sampling: str = "random"
    seed: int = 0
    record_every: int = 10
    loss_window: int = 50
    spectrum_indices: tuple | None = None
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if not np.isfinite(self.lr) or self.lr < 0:
            raise ValueError("learning rate must be finite and >= 0")
        if self.updates < 0:
            raise ValueError("updates must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.sampling not in SAMPLING_POLICIES:
            raise ValueError(f"sampling must be one of {SAMPLING_POLICIES}")
        if self.record_every < 1 or self.loss_window < 1:
            raise ValueError("record_every and loss_window must be >= 1")


@dataclass
class TrajectoryLog:
    model: str
    p: int
    steps: np.ndarray
    loss: np.ndarray  # windowed average of per-sample training losses
    dataset_loss: np.ndarray  # mean loss over the whole training set
    A: np.ndarray  # (T, p, p)
    spillover: np.ndarray
    spectrum_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    spectrum: np.ndarray | None = None  # (T, M) values |Qk_j|^2
    balance_keys: list = field(default_factory=list)  # [(alpha, j), ...]
    balancedness: np.ndarray | None = None  # (T, len(balance_keys))
    final_state: object = None
    diverged: bool = False

    @property
    def a(self) -> np.ndarray:
        return np.diagonal(self.A, axis1=1, axis2=2)

    @property
    def offdiag_max(self) -> np.ndarray:
        if self.p < 2:
            return np.zeros(len(self.steps))
        mask = ~np.eye(self.p, dtype=bool)
        return np.abs(self.A[:, mask]).max(axis=1)

    def columns(self) -> dict:
        cols = {"step": self.steps, "loss": self.loss, "dataset_loss": self.dataset_loss}
        for a in range(self.p):
            cols[f"a_{a}"] = self.A[:, a, a]
        cols["offdiag_max"] = self.offdiag_max
        cols["spillover"] = self.spillover
        for a in range(self.p):
            for b in range(self.p):
                if a != b:
                    cols[f"A_{a}_{b}"] = self.A[:, a, b]
        if self.spectrum is not None:
            for i, j in enumerate(self.spectrum_indices):
                cols[f"qk2_{int(j)}"] = self.spectrum[:, i]
        if self.balancedness is not None:
            for i, (a, j) in enumerate(self.balance_keys):
                cols[f"bal_{a}_{j}"] = self.balancedness[:, i]
        return cols

    def to_csv(self, path=None) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([str(int(v)) if k == "step" else repr(float(v)) for k, v in zip(cols, row)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class TrainingDiverged(RuntimeError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def _mean_loss(R, mode):
    sq = np.sum(R * R, axis=1)
    return float(np.mean(0.5 * sq if mode == "theory" else sq / R.shape[1]))


def _sampler(N, policy, rng):
    if policy == "random":
        while True:
            yield from rng.integers(0, N, size=1024).tolist()
    else:
        while True:
            yield from rng.permutation(N).tolist()


class _CnnRunner:
    model = "cnn"

    def __init__(self, state: CnnState, d: Dataset, scale: float):
        self.K = state.K.copy()
        self.W = state.W.copy()
        self.n = state.n
        self.Xr = np.fft.rfft2(d.images)
        self.Y = d.Y
        self.scale = scale

    def step(self, i, lr):
        n = self.n
        Xr = self.Xr[i]
        h = np.fft.irfft2(np.fft.rfft2(self.K) * Xr, s=(n, n)).ravel()
        r = self.W @ h - self.Y[i]
        e = self.scale * r
        g = (self.W.T @ e).reshape(n, n)
        gk = np.fft.irfft2(np.conj(Xr) * np.fft.rfft2(g), s=(n, n))
        self.K -= lr * gk
        self.W -= lr * np.outer(e, h)
        return r

    def predict_all(self, d=None):
        Xr = self.Xr if d is None else np.fft.rfft2(d.images)
        H = np.fft.irfft2(np.fft.rfft2(self.K) * Xr, s=(self.n, self.n)).reshape(Xr.shape[0], -1)
        return H @ self.W.T

    def state(self, t):
        return CnnState(self.K.ravel().copy(), self.W.copy(), t)


class _FcnnRunner:
    model = "fcnn"

    def __init__(self, state: FcnnState, d: Dataset, scale: float):
        self.W1 = state.W1.copy()
        self.W2 = state.W2.copy()
        self.X = d.X
        self.Y = d.Y
        self.scale = scale

    def step(self, i, lr):
        x = self.X[i]
        h = self.W1 @ x
        r = self.W2 @ h - self.Y[i]
        e = self.scale * r
        g = self.W2.T @ e
        self.W2 -= lr * np.outer(e, h)
        self.W1 -= lr * np.outer(g, x)
        return r

    def predict_all(self, d=None):
        X = self.X if d is None else d.X
        return (X @ self.W1.T) @ self.W2.T

    def state(self, t):
        return FcnnState(self.W1.copy(), self.W2.copy(), t)


def _train(runner, state, d: Dataset, config: TrainConfig, svd: SvdStructure, supports):
    if svd.phi.shape[1] != d.n * d.n or svd.p != d.p:
        raise ValueError("svd structure does not match the dataset")
    rng = make_rng(config.seed, stream=1)
    order = _sampler(d.N, config.sampling, rng)
    cnn = runner.model == "cnn"
    n2 = d.n * d.n
    spec_idx = np.zeros(0, dtype=int)
    if cnn:
        spec_idx = (np.arange(n2) if config.spectrum_indices is None and n2 <= 256
                    else np.asarray(config.spectrum_indices or (), dtype=int))
    keys = [(a, int(j)) for a, sup in enumerate(supports or []) for j in sup] if cnn else []

    rec = {"steps": [], "loss": [], "dataset_loss": [], "A": [], "spill": [], "spec": [], "bal": []}
    window = np.zeros(config.loss_window)
    filled = 0
    p = d.p

    def per_sample_loss(r):
        return mse_loss(np.zeros_like(r), r, config.loss_mode)

    def record(t):
        Yhat = runner.predict_all()
        A, spill = effective_A(sigma_yhat_x(Yhat, d.X), svd, return_spillover=True)
        dl = _mean_loss(Yhat - d.Y, config.loss_mode)
        rec["steps"].append(t)
        rec["dataset_loss"].append(dl)
        rec["loss"].append(window[:filled].mean() if filled else dl)
        rec["A"].append(A)
        rec["spill"].append(spill)
        if cnn and (len(spec_idx) or keys):
            qk = vec2d_dft(runner.K).coeffs
            rec["spec"].append(np.abs(qk[spec_idx]) ** 2)
            if keys:
                Wbar = svd.U.T @ np.conj(vec2d_dft_rows(runner.W))
                vals = []
                for a, j in keys:
                    wm = abs(Wbar[a, j])
                    vals.append(abs(wm - abs(qk[j])) / wm if wm >= 1e-12 else np.nan)
                rec["bal"].append(vals)

    def build(diverged, t):
        log = TrajectoryLog(
            model=runner.model, p=p,
            steps=np.asarray(rec["steps"], dtype=np.int64),
            loss=np.asarray(rec["loss"]), dataset_loss=np.asarray(rec["dataset_loss"]),
            A=np.asarray(rec["A"]).reshape(-1, p, p), spillover=np.asarray(rec["spill"]),
            spectrum_indices=spec_idx,
            spectrum=np.asarray(rec["spec"]).reshape(-1, len(spec_idx)) if cnn and len(spec_idx) else None,
            balance_keys=keys,
            balancedness=np.asarray(rec["bal"], dtype=float).reshape(-1, len(keys)) if keys else None,
            final_state=runner.state(t), diverged=diverged)
        return log

    t0 = state.t
    record(t0)
    for k in range(1, config.updates + 1):
        r = runner.step(next(order), config.lr)
        ls = per_sample_loss(r)
        window[(k - 1) % config.loss_window] = ls
        filled = min(filled + 1, config.loss_window)
        if not np.isfinite(ls) or ls > config.divergence_threshold:
            record(t0 + k)
            raise TrainingDiverged(f"loss {ls:.3g} exceeded {config.divergence_threshold:g} "
                                   f"at update {k}", build(True, t0 + k))
        if k % config.record_every == 0 or k == config.updates:
            record(t0 + k)
    return build(False, t0 + config.updates)


def sgd_train(state: CnnState, dataset: Dataset, config: TrainConfig, svd: SvdStructure,
              supports=None) -> TrajectoryLog:
    """Per-sample gradient descent on the CNN; the input state is left untouched.

    ``supports`` (per-mode frequency index lists) switches on the balancedness log.
    """
    runner = _CnnRunner(state, dataset, loss_grad_scale(config.loss_mode, dataset.p))
    return _train(runner, state, dataset, config, svd, supports)


def fcnn_train(state: FcnnState, dataset: Dataset, config: TrainConfig,
               svd: SvdStructure) -> TrajectoryLog:
    runner = _FcnnRunner(state, dataset, loss_grad_scale(config.loss_mode, dataset.p))
    return _train(runner, state, dataset, config, svd, None)


def predict(state, dataset: Dataset) -> np.ndarray:
    """Predictions for every sample, shape ``(N, p)``."""
    if isinstance(state, CnnState):
        return _CnnRunner(state, dataset, 1.0).predict_all()
    return _FcnnRunner(state, dataset, 1.0).predict_all()


# --------------------------------------------------------------- checkpoints

_CK_MAGIC = b"LCNNCK\x00\x00"
_CK_HEADER = struct.Struct("<8sHBIIIQ")  # magic, version, kind, n, p, hidden, t


def save_checkpoint(state, path) -> None:
    if isinstance(state, CnnState):
        head = _CK_HEADER.pack(_CK_MAGIC, 1, 0, state.n, state.p, 0, state.t)
        arrays = [state.kernel, state.W]
    else:
        head = _CK_HEADER.pack(_CK_MAGIC, 1, 1, state.n, state.p, state.hidden, state.t)
        arrays = [state.W1, state.W2]
    with open(path, "wb") as fh:
        fh.write(head)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _CK_HEADER.size:
        raise ValueError("checkpoint too short")
    magic, version, kind, n, p, hidden, t = _CK_HEADER.unpack_from(raw)
    if magic != _CK_MAGIC or version != 1:
        raise ValueError("not a checkpoint file")
    off = _CK_HEADER.size
    n2 = n * n
    shapes = [(n2,), (p, n2)] if kind == 0 else [(hidden, n2), (p, hidden)]
    need = off + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != need:
        raise ValueError(f"checkpoint payload size {len(raw)} != expected {need}")
    arrays = []
    for s in shapes:
        cnt = int(np.prod(s))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=cnt, offset=off).reshape(s).copy())
        off += 8 * cnt
    return CnnState(*arrays, t=t) if kind == 0 else FcnnState(*arrays, t=t)

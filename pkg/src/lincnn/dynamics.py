"""Closed-form mode trajectories, the reduced kernel-spectrum ODE and end-state diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import (CosineSpec, Dataset, SvdStructure, frequency_sets_disjoint,
                       mode_frequency_sets)
from .spectral import freq_from_j, symm_index, vec2d_dft, vec2d_dft_rows, wrap_angle

INV_SQRT2 = 1.0 / math.sqrt(2.0)


class SelfSymmetricFrequencyError(ValueError):
    """A mode sits on a nonzero frequency that is its own conjugate partner."""


@dataclass(frozen=True)
class ModePrediction:
    alpha: int
    s_alpha: float
    d_alpha: float
    a0: float
    lam: float
    n: int

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError("a0 must be > 0")
        if not self.s_alpha > 0:
            raise ValueError("s_alpha must be > 0")
        if self.lam < 0:
            raise ValueError("learning rate must be >= 0")

    @property
    def lam_eff(self) -> float:
        return self.n * self.d_alpha * self.lam

    @property
    def rate(self) -> float:
        """Exponent coefficient ``2 n d lambda s``."""
        return 2.0 * self.lam_eff * self.s_alpha


def sigmoid(s, a0, rate, t):
    """``s e^{rate t} / (e^{rate t} - 1 + s / a0)``, evaluated without overflow."""
    t = np.asarray(t, dtype=np.float64)
    return s / (1.0 + (s / a0 - 1.0) * np.exp(-rate * t))


def analytic_trajectory(m: ModePrediction, t):
    return sigmoid(m.s_alpha, m.a0, m.rate, t)


def fcnn_analytic_trajectory(s_alpha: float, a0: float, lam: float, t):
    if not a0 > 0:
        raise ValueError("a0 must be > 0")
    return sigmoid(s_alpha, a0, 2.0 * lam * s_alpha, t)


def learning_time(s_alpha: float, rate: float, eps: float) -> float:
    """Exact time for a sigmoid with exponent coefficient ``rate`` to go from ``eps`` to ``s - eps``."""
    if not 0 < eps < s_alpha / 2:
        raise ValueError("need 0 < eps < s/2")
    return math.log((s_alpha - eps) ** 2 / eps ** 2) / rate


def half_rise_time(m: ModePrediction) -> float:
    """Time at which ``a`` reaches ``s/2``; negative if it starts above."""
    return math.log(m.s_alpha / m.a0 - 1.0) / m.rate


def d_factor(freqs, n: int) -> float:
    """Mismatch factor of a single-frequency mode given its conjugate-closed index set."""
    js = sorted(set(int(j) for j in freqs))
    if js == [0]:
        return 1.0
    if len(js) == 1:
        f = freq_from_j(js[0], n)
        if f.self_symmetric:
            raise SelfSymmetricFrequencyError(
                f"frequency ({f.mu}, {f.nu}) is self-symmetric; no mismatch factor applies")
        raise ValueError("index set is not conjugate-closed")
    if len(js) == 2 and symm_index(freq_from_j(js[0], n)).j == js[1]:
        return INV_SQRT2
    raise ValueError(f"multi-frequency mode {js}: no single mismatch factor")


def mode_predictions(svd: SvdStructure, a0, lam: float, supports=None) -> list[ModePrediction]:
    supports = mode_frequency_sets(svd) if supports is None else supports
    a0 = np.broadcast_to(np.asarray(a0, dtype=np.float64), (svd.p,))
    return [ModePrediction(a, float(svd.s[a]), d_factor(supports[a], svd.n), float(a0[a]), lam, svd.n)
            for a in range(svd.p)]


def theory_curves(predictions, steps) -> np.ndarray:
    """Stack of analytic trajectories, shape ``(len(steps), p)``."""
    return np.stack([analytic_trajectory(m, steps) for m in predictions], axis=1)


# ------------------------------------------------------------- reduced ODE


@dataclass
class WtaTrajectory:
    steps: np.ndarray
    indices: np.ndarray  # frequency indices tracked
    qk2: np.ndarray  # (T, len(indices))
    a: np.ndarray  # (T, p)

    def derivative(self, svd: SvdStructure, supports, lam: float) -> np.ndarray:
        """Right-hand side of the spectrum ODE at the final state."""
        b, owner, _ = _wta_coeffs(svd, supports, self.indices)
        a = self.a[-1]
        return 2 * svd.n * lam * self.qk2[-1] * b * (svd.s[owner] - a[owner])


def _wta_coeffs(svd, supports, indices):
    qphi = np.abs(svd.phi_spectra())
    owner = np.empty(len(indices), dtype=int)
    pos = {int(j): i for i, j in enumerate(indices)}
    for a, sup in enumerate(supports):
        for j in sup:
            owner[pos[int(j)]] = a
    b = qphi[owner, indices]
    return b, owner, pos


def _check_supports(svd, spec, supports):
    if supports is None:
        supports = mode_frequency_sets(svd)
    if not frequency_sets_disjoint(supports):
        raise ValueError("frequency sets of the modes overlap; the reduced ODE needs disjoint sets")
    if spec is not None:
        if not spec.disjoint:
            raise ValueError("cosine classes share frequencies")
        classes = [frozenset(spec.class_frequencies(c)) for c in range(spec.p)]
        for a, sup in enumerate(supports):
            if frozenset(sup) not in classes:
                raise ValueError(f"mode {a} frequency set matches no cosine class")
    return supports


def wta_a(qk2_full_or_sub, svd: SvdStructure, supports, indices=None) -> np.ndarray:
    """Effective singular values implied by kernel spectrum magnitudes (disjoint modes)."""
    qphi = np.abs(svd.phi_spectra())
    q = np.asarray(qk2_full_or_sub, dtype=np.float64)
    lookup = (lambda j: q[j]) if indices is None else (lambda j, m={int(k): i for i, k in enumerate(indices)}: q[m[int(j)]])
    return np.array([svd.n * svd.sigma_xx_diag[a] * sum(qphi[a, j] * lookup(j) for j in sup)
                     for a, sup in enumerate(supports)])


def wta_integrate(svd: SvdStructure, spec: CosineSpec | None, qk2_0, lam: float, steps: int,
                  supports=None, substeps: int = 1, record_every: int = 1) -> WtaTrajectory:
    """Forward-Euler integration of the competitive kernel-spectrum dynamics.

    ``qk2_0`` is either the full ``n^2`` vector of ``|Qk_j|^2`` or one value per
    tracked index (the union of the mode frequency sets, ascending).  One step
    corresponds to one training sample; ``substeps`` refines the step.
    """
    supports = _check_supports(svd, spec, supports)
    indices = np.array(sorted(int(j) for sup in supports for j in sup), dtype=int)
    q = np.asarray(qk2_0, dtype=np.float64)
    q = q[indices].copy() if q.size == svd.phi.shape[1] else q.astype(np.float64).copy()
    if q.shape != indices.shape:
        raise ValueError(f"initial spectrum must have {indices.size} or {svd.phi.shape[1]} entries")
    if np.any(q <= 0):
        raise ValueError("initial spectrum magnitudes must be > 0")
    if substeps < 1 or record_every < 1 or steps < 0:
        raise ValueError("steps >= 0, substeps >= 1 and record_every >= 1 required")
    b, owner, _ = _wta_coeffs(svd, supports, indices)
    n = svd.n
    gain = n * svd.sigma_xx_diag[owner] * b  # a_alpha = sum over own set of gain * q
    s_own = svd.s[owner]
    h = 1.0 / substeps
    coef = 2.0 * n * lam * b * h

    def a_modes(q):
        return np.bincount(owner, weights=gain * q, minlength=svd.p)

    rec_t, rec_q, rec_a = [0], [q.copy()], [a_modes(q)]
    for t in range(1, steps + 1):
        for _ in range(substeps):
            a = a_modes(q)
            q = q + coef * q * (s_own - a[owner])
        if t % record_every == 0 or t == steps:
            rec_t.append(t)
            rec_q.append(q.copy())
            rec_a.append(a_modes(q))
    return WtaTrajectory(np.array(rec_t), indices, np.array(rec_q), np.array(rec_a))


# ------------------------------------------------------------- diagonals


def transformed_weights(W: np.ndarray, svd: SvdStructure) -> np.ndarray:
    """``U^T W Q^{-1}`` for a real weight matrix."""
    return svd.U.T @ np.conj(vec2d_dft_rows(W))


def balancedness_metric(state, svd: SvdStructure, supports=None) -> dict:
    """``||Wbar_aj| - |Qk_j|| / |Wbar_aj|`` on each mode's frequency set; NaN where undefined."""
    supports = _check_supports(svd, None, supports)
    Wbar = transformed_weights(state.W, svd)
    qk = np.abs(vec2d_dft(state.kernel).coeffs)
    out = {}
    for a, sup in enumerate(supports):
        for j in sup:
            w = abs(Wbar[a, j])
            out[(a, int(j))] = abs(w - qk[j]) / w if w >= 1e-12 else float("nan")
    return out


@dataclass
class PhaseVectors:
    delta_phi: np.ndarray
    delta_k: np.ndarray
    delta_w: np.ndarray
    support: np.ndarray  # bool mask of indices owned by some mode

    def residual(self) -> np.ndarray:
        """Wrapped ``delta_k + delta_w + delta_phi`` on the support, zero elsewhere."""
        r = wrap_angle(self.delta_k + self.delta_w + self.delta_phi)
        return np.where(self.support, r, 0.0)


def phase_vectors(state, svd: SvdStructure, supports=None) -> PhaseVectors:
    """Phases of the data modes, the kernel and the transformed weights.

    Each frequency index takes ``delta_phi`` and ``delta_w`` from the mode that
    owns it; indices owned by no mode are zero.
    """
    supports = _check_supports(svd, None, supports)
    n2 = svd.phi.shape[1]
    qphi = svd.phi_spectra()
    Wbar = transformed_weights(state.W, svd)
    dphi = np.zeros(n2)
    dw = np.zeros(n2)
    mask = np.zeros(n2, dtype=bool)
    for a, sup in enumerate(supports):
        sup = np.asarray(sup, dtype=int)
        dphi[sup] = np.angle(qphi[a, sup])
        dw[sup] = np.angle(Wbar[a, sup])
        mask[sup] = True
    dk = np.angle(vec2d_dft(state.kernel).coeffs)
    return PhaseVectors(wrap_angle(dphi), wrap_angle(dk), wrap_angle(dw), mask)


# ------------------------------------------------------------- reports


@dataclass
class DominantFrequencyReport:
    modes: list  # per mode: dict with ranking, dominant set, winner
    dominant_union: list
    energy_outside_dominant: float
    top_m: int
    top_m_energy_fraction: float
    sparsity_score: float
    overlap_score: float
    overlap_chance: float
    winners_dominant: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def dominant_frequency_report(state, svd: SvdStructure, supports=None, top_m: int | None = None,
                              rel_tol: float = 1e-6) -> DominantFrequencyReport:
    """Compare the trained kernel spectrum against each mode's largest Fourier magnitudes.

    A mode's dominant set holds the frequencies whose ``|Q phi|`` ties the mode
    maximum (so conjugate partners come together).
    """
    supports = mode_frequency_sets(svd) if supports is None else supports
    qphi = np.abs(svd.phi_spectra())
    qk2 = np.abs(vec2d_dft(state.kernel).coeffs) ** 2
    n2 = qk2.size
    total = qk2.sum()
    modes, dom = [], set()
    all_win = True
    for a, sup in enumerate(supports):
        sup = np.asarray(sup, dtype=int)
        order = sup[np.argsort(-qphi[a, sup], kind="stable")]
        top = qphi[a, order[0]]
        dset = [int(j) for j in order if qphi[a, j] >= top * (1 - rel_tol)]
        winner = int(sup[np.argmax(qk2[sup])])
        all_win &= winner in dset
        dom |= set(dset)
        modes.append({
            "alpha": a,
            "ranking": [{"j": int(j), "phi_mag": float(qphi[a, j]), "kernel_mag": float(np.sqrt(qk2[j]))}
                        for j in order],
            "dominant": dset,
            "winner": winner,
            "winner_dominant": winner in dset,
        })
    dom_l = sorted(dom)
    outside = float(1.0 - qk2[dom_l].sum() / total) if total > 0 else float("nan")
    m = max(1, math.ceil(0.1 * n2)) if top_m is None else int(top_m)
    srt = np.sort(qk2)[::-1]
    frac = float(srt[:m].sum() / total) if total > 0 else float("nan")
    base = m / n2
    sparsity = (frac - base) / (1 - base) if base < 1 else 0.0
    k = len(dom_l)
    top_idx = set(np.argsort(-qk2, kind="stable")[:k].tolist())
    overlap = len(top_idx & dom) / k if k else float("nan")
    return DominantFrequencyReport(modes, dom_l, outside, m, frac, float(sparsity), overlap,
                                   k / n2, bool(all_win))


@dataclass
class MinimalNormVerdict:
    status: str  # "pass" | "fail" | "not applicable"
    checks: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    loss: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def verify_minimal_norm(state, svd: SvdStructure, dataset: Dataset, supports=None, s_tol: float = 0.05,
                        phase_tol: float = 0.05, offsupport_tol: float = 1e-3,
                        loss_tol: float = 1e-2, active_rel: float = 0.1) -> MinimalNormVerdict:
    """Check whether a trained CNN has the shape of a minimal-norm solution.

    Three checks on disjoint-frequency data: the singular values implied by
    the kernel spectrum; phase alignment ``delta_k + delta_w = -delta_phi`` on
    active frequencies (``|Qk_j| >= active_rel * max`` within the mode); and the
    largest off-support entry of ``U^T W Q^{-1}`` relative to ``||W||_F``.
    Not applicable when the mean loss exceeds ``loss_tol`` times the loss of
    the zero predictor.
    """
    from .models import mse_loss, predict
    supports = _check_supports(svd, None, supports)
    tols = {"s_rel": s_tol, "phase_rad": phase_tol, "offsupport_rel": offsupport_tol,
            "loss_rel": loss_tol, "active_rel": active_rel}
    Yhat = predict(state, dataset)
    loss = float(np.mean([mse_loss(dataset.Y[i], Yhat[i]) for i in range(dataset.N)]))
    zero_loss = float(np.mean([mse_loss(dataset.Y[i], 0 * Yhat[i]) for i in range(dataset.N)]))
    if loss > loss_tol * zero_loss:
        return MinimalNormVerdict("not applicable", {"reason": "state has not converged"}, tols, loss)

    qk = vec2d_dft(state.kernel).coeffs
    implied = wta_a(np.abs(qk) ** 2, svd, supports)
    s_err = np.abs(implied - svd.s) / svd.s

    pv = phase_vectors(state, svd, supports)
    resid = np.abs(pv.residual())
    phase_err = []
    for sup in supports:
        sup = np.asarray(sup, dtype=int)
        mags = np.abs(qk[sup])
        act = sup[mags >= active_rel * mags.max()]
        phase_err.append(float(resid[act].max()))

    Wbar = transformed_weights(state.W, svd)
    mask = np.ones(Wbar.shape, dtype=bool)
    for a, sup in enumerate(supports):
        mask[a, sup] = False
    off = float(np.abs(Wbar[mask]).max()) if mask.any() else 0.0
    off_rel = off / float(np.linalg.norm(state.W))

    checks = {
        "implied_s": implied.tolist(),
        "s_rel_error": s_err.tolist(),
        "s_ok": bool(np.all(s_err <= s_tol)),
        "phase_error": phase_err,
        "phase_ok": bool(max(phase_err) <= phase_tol),
        "offsupport_rel": off_rel,
        "offsupport_ok": bool(off_rel <= offsupport_tol),
    }
    ok = checks["s_ok"] and checks["phase_ok"] and checks["offsupport_ok"]
    return MinimalNormVerdict("pass" if ok else "fail", checks, tols, loss)

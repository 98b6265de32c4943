"""Multi-trial experiment runner with on-disk artifacts and trial aggregation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .. import dynamics as dyn
from ..datasets import (Dataset, SvdStructure, dataset_svd, effective_A, mode_frequency_sets,
                        frequency_sets_disjoint, save_dataset, sigma_yhat_x)
from ..models import (TrainingDiverged, fcnn_train, init_aligned_balanced, init_aligned_fcnn,
                      init_random_cnn, init_random_fcnn, predict, save_checkpoint, sgd_train,
                      theory_learning_rate)
from .config import ExperimentConfig, build_dataset

log = logging.getLogger(__name__)


def _write_csv(path: Path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    path.write_text(text)
    return text


def blob_hash(data: bytes) -> str:
    """Content hash in the form git uses for blobs."""
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


@dataclass
class AggregateResult:
    model: str
    steps: np.ndarray
    mean: dict
    std: dict
    n_trials: int
    excluded: list = field(default_factory=list)

    def a_mean(self, p: int) -> np.ndarray:
        return np.stack([self.mean[f"a_{a}"] for a in range(p)], axis=1)

    def a_std(self, p: int) -> np.ndarray:
        return np.stack([self.std[f"a_{a}"] for a in range(p)], axis=1)

    def to_csv(self, path=None) -> str:
        keys = [k for k in self.mean if k != "step"]
        header = ["step"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")]
        rows = []
        for i, t in enumerate(self.steps):
            row = [str(int(t))]
            for k in keys:
                row += [repr(float(self.mean[k][i])), repr(float(self.std[k][i]))]
            rows.append(row)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, model: str = "cnn", n_trials: int = 0) -> "AggregateResult":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        steps = data[:, 0].astype(np.int64)
        mean, std = {}, {}
        for c, name in enumerate(header[1:], start=1):
            key, kind = name.rsplit("_", 1)
            (mean if kind == "mean" else std)[key] = data[:, c]
        return cls(model, steps, mean, std, n_trials)


def aggregate(logs, model: str) -> AggregateResult:
    """Per-record-point mean and population standard deviation across trials."""
    if not logs:
        raise ValueError("no trials to aggregate")
    cols = [lg.columns() for lg in logs]
    steps = cols[0]["step"]
    for c in cols[1:]:
        if not np.array_equal(c["step"], steps):
            raise ValueError("record grids differ across trials")
    mean, std = {}, {}
    for k in cols[0]:
        if k == "step":
            continue
        stack = np.stack([c[k] for c in cols])
        mean[k] = stack.mean(axis=0)
        std[k] = stack.std(axis=0)
    return AggregateResult(model, np.asarray(steps), mean, std, len(logs))


@dataclass
class TheoryCurves:
    steps: np.ndarray
    a: np.ndarray  # (T, p) mean over trials of per-trial closed-form curves


@dataclass
class ModeDeviation:
    alpha: int
    max_rel_deviation: float
    half_rise_sim: float
    half_rise_theory: float

    @property
    def half_rise_diff(self) -> float:
        return self.half_rise_sim - self.half_rise_theory


def half_rise_times(steps, a, s) -> np.ndarray:
    """First time each column crosses ``s/2`` (linear interpolation); NaN if never."""
    steps = np.asarray(steps, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    out = np.full(a.shape[1], np.nan)
    for k in range(a.shape[1]):
        h = s[k] / 2
        above = np.flatnonzero(a[:, k] >= h)
        if above.size == 0:
            continue
        i = above[0]
        if i == 0:
            out[k] = steps[0]
            continue
        y0, y1 = a[i - 1, k], a[i, k]
        out[k] = steps[i - 1] + (h - y0) / (y1 - y0) * (steps[i] - steps[i - 1])
    return out


def compare_to_theory(result: AggregateResult, theory: TheoryCurves, s) -> list[ModeDeviation]:
    """Largest gap between mean simulated and mean predicted ``a`` per mode, relative to ``s``."""
    if not np.array_equal(np.asarray(result.steps), np.asarray(theory.steps)):
        raise ValueError("record grids of simulation and theory differ")
    s = np.asarray(s, dtype=np.float64)
    sim = result.a_mean(len(s))
    dev = np.abs(sim - theory.a).max(axis=0) / s
    hs = half_rise_times(result.steps, sim, s)
    ht = half_rise_times(theory.steps, theory.a, s)
    return [ModeDeviation(a, float(dev[a]), float(hs[a]), float(ht[a])) for a in range(len(s))]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    svd: SvdStructure
    aggregates: dict  # model -> AggregateResult
    logs: dict = field(default_factory=dict)  # model -> list[TrajectoryLog | None]
    theory: dict = field(default_factory=dict)  # model -> TheoryCurves
    diagnostics: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    out_dir: Path | None = None

    def comparison(self, model: str = "cnn") -> list[ModeDeviation]:
        return compare_to_theory(self.aggregates[model], self.theory[model], self.svd.s)


def _initial_a(state, d, svd):
    return np.diag(effective_A(sigma_yhat_x(predict(state, d), d.X), svd))


def _run_trial(args):
    cfg, d, spec, svd, supports, seed = args
    n = d.n
    out = {"seed": seed}
    models = ["cnn", "fcnn"] if cfg.model == "both" else [cfg.model]
    cnn_state = None
    if "cnn" in models or cfg.init == "aligned":
        if cfg.init == "aligned":
            cnn_state = init_aligned_balanced(svd, spec, cfg.sigma, seed, supports=supports)
        else:
            cnn_state = init_random_cnn(n, d.p, cfg.sigma, seed)
    disjoint = supports is not None
    for m in models:
        tc = cfg.train_config(m, n, seed)
        if m == "cnn":
            state = cnn_state
        elif cfg.init == "aligned":
            state = init_aligned_fcnn(svd, _initial_a(cnn_state, d, svd))
        else:
            state = init_random_fcnn(n, d.p, cfg.sigma, seed)
        a0 = _initial_a(state, d, svd)
        try:
            if m == "cnn":
                lg = sgd_train(state, d, tc, svd,
                               supports=supports if disjoint and "balancedness" in cfg.diagnostics else None)
            else:
                lg = fcnn_train(state, d, tc, svd)
        except TrainingDiverged as exc:
            out[m] = {"log": exc.log, "diverged": True, "a0": a0, "message": str(exc)}
            continue
        diag = {}
        if m == "cnn" and disjoint:
            if "dominant" in cfg.diagnostics:
                diag["dominant"] = dyn.dominant_frequency_report(lg.final_state, svd, supports)
            if "minimal_norm" in cfg.diagnostics:
                diag["minimal_norm"] = dyn.verify_minimal_norm(lg.final_state, svd, d, supports)
        elif m == "cnn" and "dominant" in cfg.diagnostics:
            diag["dominant"] = dyn.dominant_frequency_report(lg.final_state, svd, mode_frequency_sets(svd, 1e-3))
        out[m] = {"log": lg, "diverged": False, "a0": a0, "diag": diag}
    return out


def _theory_curves(cfg, m, d, svd, supports, a0s, steps):
    lam = cfg.lr if m == "cnn" else cfg.fcnn_lr(d.n)
    if cfg.loss_mode == "framework":
        lam = theory_learning_rate(lam, d.p)
    curves = []
    for a0 in a0s:
        if m == "cnn":
            preds = dyn.mode_predictions(svd, a0, lam, supports)
            curves.append(dyn.theory_curves(preds, steps))
        else:
            curves.append(np.stack([dyn.fcnn_analytic_trajectory(svd.s[a], a0[a], lam, steps)
                                    for a in range(svd.p)], axis=1))
    return TheoryCurves(np.asarray(steps), np.mean(curves, axis=0))


def _diag_json(v):
    if hasattr(v, "to_json"):
        return json.loads(v.to_json())
    return v


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every trial, aggregate, and write artifacts when an output directory is set."""
    d, spec = build_dataset(cfg.generator, cfg.dataset_params)
    svd = dataset_svd(d)
    supports = mode_frequency_sets(svd)
    if not frequency_sets_disjoint(supports):
        supports = None
    if cfg.init == "aligned" and supports is None:
        raise ValueError("aligned initialization needs a dataset whose modes use disjoint frequencies")
    seeds = cfg.seeds()
    jobs = [(cfg, d, spec, svd, supports, s) for s in seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(j) for j in jobs]

    models = ["cnn", "fcnn"] if cfg.model == "both" else [cfg.model]
    res = ExperimentResult(cfg, d, svd, {})
    for m in models:
        logs = [t[m]["log"] for t in trials]
        good = [i for i, t in enumerate(trials) if not t[m]["diverged"]]
        excluded = [seeds[i] for i, t in enumerate(trials) if t[m]["diverged"]]
        for s in excluded:
            log.warning("trial with seed %d diverged (%s); excluded from aggregates", s, m)
        res.logs[m] = logs
        if not good:
            res.aggregates[m] = None
            continue
        agg = aggregate([logs[i] for i in good], m)
        agg.excluded = excluded
        res.aggregates[m] = agg
        if cfg.theory_overlay and supports is not None:
            try:
                res.theory[m] = _theory_curves(cfg, m, d, svd, supports,
                                               [trials[i][m]["a0"] for i in good], agg.steps)
            except ValueError as exc:
                log.warning("no closed-form overlay for %s: %s", m, exc)
        res.diagnostics[m] = [{k: v for k, v in (t[m].get("diag") or {}).items()} for t in trials]

    res.manifest = {
        "name": cfg.name,
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": seeds,
        "singular_values": svd.s.tolist(),
        "degenerate_modes": [list(p) for p in svd.degenerate],
        "frequency_sets": supports,
        "excluded": {m: res.aggregates[m].excluded if res.aggregates[m] else seeds for m in models},
        "files": {},
    }
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        _persist(res, Path(out_dir), models, trials)
    return res


def _persist(res: ExperimentResult, out: Path, models, trials):
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def track(path: Path):
        files[path.name] = blob_hash(path.read_bytes())

    save_dataset(res.dataset, out / "dataset.lcnn")
    track(out / "dataset.lcnn")
    for m in models:
        for i, lg in enumerate(res.logs[m]):
            p = out / f"trial_{m}_{i:03d}.csv"
            lg.to_csv(p)
            track(p)
            if not trials[i][m]["diverged"]:
                ck = out / f"final_{m}_{i:03d}.ckpt"
                save_checkpoint(lg.final_state, ck)
                track(ck)
        agg = res.aggregates[m]
        if agg is not None:
            agg.to_csv(out / f"aggregate_{m}.csv")
            track(out / f"aggregate_{m}.csv")
        if m in res.theory:
            th = res.theory[m]
            p = out / f"theory_{m}.csv"
            _write_csv(p, ["step"] + [f"a_{a}" for a in range(res.svd.p)],
                       [[str(int(t))] + [repr(float(v)) for v in row] for t, row in zip(th.steps, th.a)])
            track(p)
        diag = [{k: _diag_json(v) for k, v in dd.items()} for dd in res.diagnostics.get(m, [])]
        if any(diag):
            p = out / f"diagnostics_{m}.json"
            p.write_text(json.dumps(diag, indent=2, default=float) + "\n")
            track(p)
    res.manifest["files"] = files
    res.manifest["content_hash"] = blob_hash(json.dumps(files, sort_keys=True).encode())
    (out / "manifest.json").write_text(json.dumps(res.manifest, indent=2, default=float) + "\n")
    res.out_dir = out


def load_run(out_dir) -> dict:
    """Manifest, aggregates and theory curves of a finished run directory."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    aggs, theory = {}, {}
    for m in ("cnn", "fcnn"):
        p = out / f"aggregate_{m}.csv"
        if p.exists():
            aggs[m] = AggregateResult.from_csv(p, m, len(manifest["seeds"]))
        p = out / f"theory_{m}.csv"
        if p.exists():
            data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
            theory[m] = TheoryCurves(data[:, 0].astype(np.int64), data[:, 1:])
    return {"manifest": manifest, "aggregates": aggs, "theory": theory,
            "s": np.asarray(manifest["singular_values"])}

"""SVG line charts of aggregated runs: mean with a one-std band, dashed guides."""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGURE_KINDS = ("a-trajectories", "spectrum", "loss")


def _band(ax, x, mean, std, label, color, style="-"):
    ax.plot(x, mean, style, color=color, label=label, lw=1.4)
    if std is not None:
        ax.fill_between(x, mean - std, mean + std, color=color, alpha=0.2, lw=0)


def _save(fig, path: Path) -> Path:
    with plt.rc_context({"svg.hashsalt": "lincnn", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_figures(run: dict, kind: str, out_dir, markers=()) -> list[Path]:
    """Render one figure kind for every model in ``run`` (as returned by ``load_run``).

    ``markers`` are time points drawn as vertical dashed lines.
    """
    if kind not in FIGURE_KINDS:
        raise ValueError(f"unknown figure kind {kind!r}; choose from {FIGURE_KINDS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = np.asarray(run["s"])
    p = len(s)
    colors = plt.get_cmap("tab10").colors
    paths = []
    for model, agg in sorted(run["aggregates"].items()):
        if kind == "spectrum" and not any(k.startswith("qk2_") for k in agg.mean):
            continue
        fig, ax = plt.subplots(figsize=(6, 4), layout="constrained")
        x = agg.steps
        if kind == "a-trajectories":
            for a in range(p):
                _band(ax, x, agg.mean[f"a_{a}"], agg.std[f"a_{a}"], f"a_{a}", colors[a % 10])
                ax.axhline(s[a], color=colors[a % 10], ls="--", lw=0.8)
            th = run.get("theory", {}).get(model)
            if th is not None:
                for a in range(p):
                    ax.plot(th.steps, th.a[:, a], ":", color="k", lw=1.0,
                            label="closed form" if a == 0 else None)
            ax.set_ylabel("effective singular value")
        elif kind == "spectrum":
            keys = sorted((k for k in agg.mean if k.startswith("qk2_")), key=lambda k: int(k[4:]))
            for i, k in enumerate(keys):
                _band(ax, x, agg.mean[k], agg.std[k], f"j={k[4:]}", colors[i % 10])
            ax.set_ylabel("|Qk_j|^2")
        else:
            _band(ax, x, agg.mean["loss"], agg.std["loss"], "train (windowed)", colors[0])
            _band(ax, x, agg.mean["dataset_loss"], agg.std["dataset_loss"], "train (full set)", colors[1])
            if "test_loss" in agg.mean:
                _band(ax, x, agg.mean["test_loss"], agg.std["test_loss"], "test", colors[2])
            ax.set_ylabel("loss")
        for t in markers:
            ax.axvline(t, color="grey", ls="--", lw=0.8)
        ax.set_xlabel("samples")
        ax.set_title(f"{run['manifest'].get('name', '')} ({model})")
        if len(ax.get_legend_handles_labels()[0]) <= 12:
            ax.legend(fontsize=7, loc="best")
        paths.append(_save(fig, out / f"{kind}_{model}.svg"))
    if not paths:
        raise ValueError(f"nothing to draw for kind {kind!r}: no kernel spectrum was logged")
    return paths

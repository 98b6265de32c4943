"""Command-line entry points: ``python -m lincnn <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .. import dynamics as dyn
from ..datasets import (DatasetFormatError, dataset_svd, dataset_to_csv, frequency_sets_disjoint,
                        load_dataset, mode_frequency_sets, save_dataset)
from ..harness import (FIGURE_KINDS, PRESETS, ConfigError, ExperimentConfig, build_dataset,
                       emit_figures, load_preset, load_run, preset_names, run_experiment)
from ..datasets import effective_A, sigma_yhat_x
from ..models import CnnState, init_aligned_balanced, load_checkpoint, predict, theory_learning_rate

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3


def _config_from_args(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    cfg = ExperimentConfig.from_file(args.config) if args.config else load_preset(args.preset)
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "updates", None) is not None:
        cfg.updates = args.updates
    cfg.__post_init__()
    return cfg


def cmd_gen(args) -> int:
    params = yaml.safe_load(args.params) if args.params else {}
    if params is not None and not isinstance(params, dict):
        raise ConfigError("--params must be a YAML mapping")
    d, _ = build_dataset(args.generator, params)
    save_dataset(d, args.output)
    if args.csv:
        dataset_to_csv(d, args.csv)
    print(f"wrote {args.output}: n={d.n} p={d.p} N={d.N}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = args.out or cfg.out_dir or f"runs/{cfg.name}"
    res = run_experiment(cfg, out)
    for m, agg in res.aggregates.items():
        if agg is None:
            print(f"{m}: every trial diverged")
            continue
        final = [float(agg.mean[f"a_{a}"][-1]) for a in range(res.svd.p)]
        print(f"{m}: final a = {np.round(final, 6).tolist()}  (s = {np.round(res.svd.s, 6).tolist()})")
        if m in res.theory:
            for dv in res.comparison(m):
                print(f"  mode {dv.alpha}: max |a_sim - a_theory| / s = {dv.max_rel_deviation:.4f}, "
                      f"half-rise {dv.half_rise_sim:.1f} vs {dv.half_rise_theory:.1f}")
    print(f"artifacts in {out}")
    diverged = any(agg is None or agg.excluded for agg in res.aggregates.values())
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_theory(args) -> int:
    cfg = _config_from_args(args)
    d, spec = build_dataset(cfg.generator, cfg.dataset_params)
    svd = dataset_svd(d)
    supports = mode_frequency_sets(svd)
    if not frequency_sets_disjoint(supports):
        raise ConfigError("closed-form curves need modes with disjoint frequency sets")
    lam = cfg.lr if cfg.loss_mode == "theory" else theory_learning_rate(cfg.lr, d.p)
    lam_fc = cfg.fcnn_lr(d.n) if cfg.loss_mode == "theory" else theory_learning_rate(cfg.fcnn_lr(d.n), d.p)
    if args.a0 is not None:
        a0 = np.full(svd.p, args.a0)
    elif cfg.init == "aligned":
        st = init_aligned_balanced(svd, spec, cfg.sigma, cfg.base_seed, supports=supports)
        a0 = np.diag(effective_A(sigma_yhat_x(predict(st, d), d.X), svd))
    else:
        raise ConfigError("random initialization has no closed form; pass --a0")
    steps = np.arange(0, (args.steps or cfg.updates) + 1, args.every or cfg.record_cadence(d.n))
    cnn = dyn.theory_curves(dyn.mode_predictions(svd, a0, lam, supports), steps)
    fc = np.stack([dyn.fcnn_analytic_trajectory(svd.s[a], a0[a], lam_fc, steps) for a in range(svd.p)], 1)
    lines = ["step," + ",".join([f"cnn_a_{a}" for a in range(svd.p)] + [f"fcnn_a_{a}" for a in range(svd.p)])]
    for t, r1, r2 in zip(steps, cnn, fc):
        lines.append(",".join([str(int(t))] + [repr(float(v)) for v in np.concatenate([r1, r2])]))
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.run:
        run = Path(args.run)
        d = load_dataset(run / "dataset.lcnn")
        ckpts = sorted(run.glob("final_cnn_*.ckpt"))
    else:
        if not (args.checkpoint and args.dataset):
            raise ConfigError("give --run DIR or both --checkpoint and --dataset")
        d = load_dataset(args.dataset)
        ckpts = [Path(args.checkpoint)]
    if not ckpts:
        raise ConfigError("no CNN checkpoints found")
    svd = dataset_svd(d)
    supports = mode_frequency_sets(svd)
    disjoint = frequency_sets_disjoint(supports)
    reports, failed = [], False
    for ck in ckpts:
        state = load_checkpoint(ck)
        if not isinstance(state, CnnState):
            raise ConfigError(f"{ck} is not a CNN checkpoint")
        entry = {"checkpoint": str(ck)}
        if disjoint:
            v = dyn.verify_minimal_norm(state, svd, d, supports, s_tol=args.s_tol,
                                        phase_tol=args.phase_tol, offsupport_tol=args.offsupport_tol)
            entry["minimal_norm"] = json.loads(v.to_json())
            failed |= v.status == "fail"
            entry["dominant"] = json.loads(dyn.dominant_frequency_report(state, svd, supports).to_json())
        else:
            entry["minimal_norm"] = {"status": "not applicable", "checks": {"reason": "modes share frequencies"}}
            entry["dominant"] = json.loads(
                dyn.dominant_frequency_report(state, svd, mode_frequency_sets(svd, 1e-3)).to_json())
        reports.append(entry)
    text = json.dumps(reports, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    for e in reports:
        print(f"{e['checkpoint']}: minimal-norm {e['minimal_norm']['status']}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_fig(args) -> int:
    run = load_run(args.run)
    kinds = FIGURE_KINDS if args.kind == "all" else [args.kind]
    for k in kinds:
        for p in emit_figures(run, k, args.out or Path(args.run) / "figures", markers=args.marker or ()):
            print(p)
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.show:
        cfg = load_preset(args.show)
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    for name in preset_names():
        raw = PRESETS[name]
        tr = raw["train"]
        print(f"{name}: {raw['dataset']['generator']}, model={raw['model']}, init={raw['init']['kind']}, "
              f"lr={tr['lr']:g} ({tr['loss_mode']} loss), updates={tr['updates']}, "
              f"trials={raw['trials']['count']}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lincnn", description="Linear CNN learning-dynamics laboratory.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a dataset file")
    g.add_argument("generator", choices=["pure-cosines", "sums-of-cosines", "geometric-shapes"])
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--params", help="generator parameters as a YAML mapping")
    g.add_argument("--csv", help="also write the images as CSV")
    g.set_defaults(func=cmd_gen)

    def add_cfg(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--preset", choices=sorted(PRESETS))

    t = sub.add_parser("train", help="run an experiment")
    add_cfg(t)
    t.add_argument("--out", help="output directory")
    t.add_argument("--trials", type=int)
    t.add_argument("--updates", type=int)
    t.set_defaults(func=cmd_train)

    th = sub.add_parser("theory", help="emit closed-form trajectories as CSV")
    add_cfg(th)
    th.add_argument("--a0", type=float, help="common initial effective singular value")
    th.add_argument("--steps", type=int)
    th.add_argument("--every", type=int)
    th.add_argument("-o", "--output")
    th.set_defaults(func=cmd_theory)

    v = sub.add_parser("verify", help="minimal-norm and dominant-frequency checks")
    v.add_argument("--run", help="run directory written by train")
    v.add_argument("--checkpoint")
    v.add_argument("--dataset")
    v.add_argument("--s-tol", type=float, default=0.05)
    v.add_argument("--phase-tol", type=float, default=0.05)
    v.add_argument("--offsupport-tol", type=float, default=1e-3)
    v.add_argument("-o", "--output")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("fig", help="render SVG figures for a run")
    f.add_argument("--run", required=True)
    f.add_argument("--kind", default="all", choices=list(FIGURE_KINDS) + ["all"])
    f.add_argument("--out")
    f.add_argument("--marker", type=float, action="append", help="vertical dashed line at this step")
    f.set_defaults(func=cmd_fig)

    pr = sub.add_parser("presets", help="list bundled experiment presets")
    pr.add_argument("--show", metavar="NAME", help="print a preset as YAML")
    pr.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

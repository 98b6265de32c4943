import csv
import json

import numpy as np
import pytest

from lincnn.harness import (AggregateResult, ConfigError, ExperimentConfig, TheoryCurves,
                            compare_to_theory, emit_figures, load_preset, load_run, preset_names,
                            run_experiment)
from lincnn.harness.runner import half_rise_times

SMALL = """
name: small
dataset:
  generator: pure-cosines
model: both
init: {kind: aligned, sigma: 1.0e-5}
train: {lr: 5.0e-4, loss_mode: framework, updates: 600, sampling: shuffle, record_every: 20}
trials: {count: 3, base_seed: 4}
outputs: {diagnostics: [balancedness, minimal_norm]}
theory_overlay: true
"""


def test_config_round_trip():
    cfg = ExperimentConfig.from_yaml(SMALL)
    assert cfg.trials == 3 and cfg.seeds() == [4, 5, 6]
    assert cfg.fcnn_lr(16) == pytest.approx(16 * 5e-4)
    again = ExperimentConfig.from_yaml(cfg.to_yaml())
    assert again.to_dict() == cfg.to_dict()
    assert cfg.record_cadence(16) == 20
    plain = ExperimentConfig("x", "pure-cosines")
    assert plain.record_cadence(16) == 10 and plain.record_cadence(64) == 100
    assert ExperimentConfig("x", "file").record_cadence(64) == 500


@pytest.mark.parametrize("bad", [
    "name: x\n",
    "dataset: {generator: nope}\ntrain: {lr: 1, updates: 1}\n",
    "dataset: {generator: pure-cosines}\ntrain: {lr: 1, updates: 1}\nmodel: rnn\n",
    "dataset: {generator: pure-cosines}\ntrain: {lr: 1, updates: 1}\ntrials: {count: 0}\n",
    "dataset: {generator: pure-cosines}\ntrain: {lr: 1, updates: 1, momentum: 0.9}\n",
    "dataset: {generator: pure-cosines}\ntrain: {lr: -1, updates: 1}\n",
    "dataset: {generator: pure-cosines}\ntrain: {lr: 1, updates: 1}\nextra: 1\n",
    "[unclosed",
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(bad)


def test_presets():
    assert preset_names() == ["geometric-shapes-4class", "pure-cosines-4class", "sums-of-cosines-2class"]
    cfg = load_preset("sums-of-cosines-2class")
    assert (cfg.updates, cfg.trials, cfg.lr) == (600, 10, 1e-4)
    with pytest.raises(KeyError):
        load_preset("nope")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_experiment(ExperimentConfig.from_yaml(SMALL), out), out


def test_run_writes_artifacts(small_run):
    res, out = small_run
    names = {p.name for p in out.iterdir()}
    for f in ("manifest.json", "aggregate_cnn.csv", "aggregate_fcnn.csv", "theory_cnn.csv",
              "trial_cnn_000.csv", "trial_fcnn_002.csv", "final_cnn_001.ckpt", "dataset.lcnn"):
        assert f in names
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [4, 5, 6] and len(man["content_hash"]) == 40
    assert man["files"]["aggregate_cnn.csv"]


def test_aggregate_matches_trial_files(small_run):
    res, out = small_run
    per = []
    for i in range(3):
        with open(out / f"trial_cnn_{i:03d}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        per.append(np.array([float(r["a_1"]) for r in rows]))
    per = np.array(per)
    agg = AggregateResult.from_csv(out / "aggregate_cnn.csv")
    assert np.allclose(agg.mean["a_1"], per.mean(axis=0), rtol=1e-12)
    assert np.allclose(agg.std["a_1"], per.std(axis=0), rtol=1e-9, atol=1e-300)
    assert np.all(agg.std["a_1"] >= 0)


def test_run_is_reproducible(small_run, tmp_path):
    _, out = small_run
    run_experiment(ExperimentConfig.from_yaml(SMALL), tmp_path)
    for name in ("trial_cnn_000.csv", "trial_fcnn_001.csv", "aggregate_cnn.csv", "theory_fcnn.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    assert a["content_hash"] == b["content_hash"]


def test_adding_trials_keeps_existing(small_run, tmp_path):
    _, out = small_run
    cfg = ExperimentConfig.from_yaml(SMALL)
    cfg.trials = 4
    run_experiment(cfg, tmp_path)
    assert (out / "trial_cnn_002.csv").read_bytes() == (tmp_path / "trial_cnn_002.csv").read_bytes()


def test_theory_comparison(small_run):
    res, _ = small_run
    devs = res.comparison("cnn")
    assert len(devs) == 4
    assert devs[0].max_rel_deviation < 0.5
    bad = TheoryCurves(res.theory["cnn"].steps[:-1], res.theory["cnn"].a[:-1])
    with pytest.raises(ValueError):
        compare_to_theory(res.aggregates["cnn"], bad, res.svd.s)


def test_flat_run_with_zero_learning_rate(tmp_path):
    cfg = ExperimentConfig("flat", "pure-cosines", model="cnn", init="aligned", lr=0.0, updates=100,
                           trials=1)
    res = run_experiment(cfg)
    agg = res.aggregates["cnn"]
    for a in range(4):
        assert np.all(agg.mean[f"a_{a}"] == agg.mean[f"a_{a}"][0])
        assert np.all(agg.std[f"a_{a}"] == 0)


def test_diverged_trials_are_excluded(caplog):
    cfg = ExperimentConfig("hot", "pure-cosines", model="cnn", init="random", sigma=0.1, lr=5.0,
                           updates=500, trials=2)
    res = run_experiment(cfg)
    assert res.aggregates["cnn"] is None
    assert "diverged" in caplog.text


def test_half_rise_times():
    t = np.arange(5.0)
    a = np.array([[0, 0], [1, 0], [2, 0], [3, 0], [4, 0.0]])
    h = half_rise_times(t, a, np.array([3.0, 1.0]))
    assert h[0] == pytest.approx(1.5) and np.isnan(h[1])


def test_figures_are_deterministic(small_run, tmp_path):
    _, out = small_run
    run = load_run(out)
    p1 = emit_figures(run, "a-trajectories", tmp_path / "a")
    p2 = emit_figures(run, "a-trajectories", tmp_path / "b")
    assert [p.read_bytes() for p in p1] == [p.read_bytes() for p in p2]
    assert p1[0].read_text().lstrip().startswith("<?xml") and "<svg" in p1[0].read_text()
    assert len(emit_figures(run, "loss", tmp_path / "c", markers=[100])) == 2
    assert [p.name for p in emit_figures(run, "spectrum", tmp_path / "d")] == ["spectrum_cnn.svg"]
    del run["aggregates"]["cnn"]
    with pytest.raises(ValueError):
        emit_figures(run, "spectrum", tmp_path / "d")
    with pytest.raises(ValueError):
        emit_figures(run, "heatmap", tmp_path / "e")


def test_file_dataset_config(tmp_path):
    from lincnn.datasets import gen_pure_cosines, pure_cosines_default, save_dataset
    save_dataset(gen_pure_cosines(pure_cosines_default()), tmp_path / "d.lcnn")
    cfg = ExperimentConfig.from_dict({"dataset": {"generator": "file", "params": {"path": str(tmp_path / "d.lcnn")}},
                                      "train": {"lr": 1e-4, "updates": 20}})
    res = run_experiment(cfg)
    assert res.aggregates["cnn"].steps[-1] == 20

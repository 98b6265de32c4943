import numpy as np
import pytest

from gradcheck import cnn_instance, fcnn_instance
from lincnn import datasets as ds
from lincnn import models as md
from lincnn.convops import materialize_dbc
from lincnn.spectral import vec2d_dft


@pytest.fixture(scope="module")
def pure():
    spec = ds.pure_cosines_default()
    d = ds.gen_pure_cosines(spec)
    return spec, d, ds.dataset_svd(d)


@pytest.mark.parametrize("mode", ["theory", "framework"])
def test_gradients_finite_differences(mode):
    rng = np.random.default_rng(7)
    for _ in range(10):
        assert cnn_instance(rng, mode) < 1e-6
        assert fcnn_instance(rng, mode) < 1e-6


def test_forward_equals_dense_operator():
    rng = np.random.default_rng(3)
    st = md.CnnState(rng.normal(size=25), rng.normal(size=(3, 25)))
    x = rng.normal(size=25)
    y_hat, h = md.cnn_forward(st, x)
    assert np.allclose(h, materialize_dbc(st.kernel) @ x)
    assert np.allclose(y_hat, st.W @ materialize_dbc(st.kernel) @ x)


def test_loss_modes():
    y, yh = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    assert md.mse_loss(y, yh) == pytest.approx(0.25)
    assert md.mse_loss(y, yh, "framework") == pytest.approx(0.25)
    assert md.theory_learning_rate(1 / 2000, 4) == pytest.approx(1 / 4000)
    with pytest.raises(ValueError):
        md.mse_loss(y, yh, "l1")


def test_trainer_step_matches_gradients(pure):
    _, d, svd = pure
    st = md.init_random_cnn(16, 4, 0.1, 1)
    cfg = md.TrainConfig(lr=0.01, updates=1, sampling="shuffle", seed=0)
    log = md.sgd_train(st, d, cfg, svd)
    i = md.make_rng(0, 1).permutation(d.N)[0]
    gk, gW = md.cnn_gradients(st, d.images[i], d.Y[i])
    assert np.allclose(log.final_state.kernel, st.kernel - 0.01 * gk, atol=1e-14)
    assert np.allclose(log.final_state.W, st.W - 0.01 * gW, atol=1e-14)
    assert log.final_state.t == 1


def test_fcnn_step_matches_gradients(pure):
    _, d, svd = pure
    st = md.init_random_fcnn(16, 4, 0.05, 1)
    log = md.fcnn_train(st, d, md.TrainConfig(lr=0.01, updates=1, sampling="shuffle", seed=0), svd)
    i = md.make_rng(0, 1).permutation(d.N)[0]
    g1, g2 = md.fcnn_gradients(st, d.X[i], d.Y[i])
    assert np.allclose(log.final_state.W1, st.W1 - 0.01 * g1, atol=1e-14)
    assert np.allclose(log.final_state.W2, st.W2 - 0.01 * g2, atol=1e-14)


def test_zero_learning_rate_keeps_state(pure):
    _, d, svd = pure
    st = md.init_random_cnn(16, 4, 1e-3, 0)
    log = md.sgd_train(st, d, md.TrainConfig(lr=0.0, updates=50, record_every=10), svd)
    assert np.array_equal(log.final_state.kernel, st.kernel) and np.array_equal(log.final_state.W, st.W)
    assert np.allclose(log.A, log.A[0])


def test_framework_loss_equals_rescaled_theory(pure):
    _, d, svd = pure
    st = md.init_random_cnn(16, 4, 1e-2, 0)
    a = md.sgd_train(st, d, md.TrainConfig(lr=1e-3, updates=200, loss_mode="framework"), svd)
    b = md.sgd_train(st, d, md.TrainConfig(lr=md.theory_learning_rate(1e-3, 4), updates=200), svd)
    assert np.allclose(a.A, b.A, rtol=1e-9, atol=1e-15)


def test_random_init_is_small(pure):
    _, d, svd = pure
    st = md.init_random_cnn(16, 4, 1e-5, 0)
    A = ds.effective_A(ds.sigma_yhat_x(md.predict(st, d), d.X), svd)
    assert np.abs(np.diag(A)).max() < 1e-6 * svd.s[0]
    with pytest.raises(ValueError):
        md.init_random_cnn(16, 4, 0.0, 0)


def test_aligned_balanced_init(pure):
    spec, d, svd = pure
    st = md.init_aligned_balanced(svd, spec, 1e-5, 3)
    A = ds.effective_A(ds.sigma_yhat_x(md.predict(st, d), d.X), svd)
    off = A[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() < 1e-10 and np.all(np.diag(A) > 0)
    qk2 = np.abs(vec2d_dft(st.kernel).coeffs) ** 2
    n = 16
    for a, sup in enumerate(ds.mode_frequency_sets(svd)):
        d_a = 1.0 if sup == [0] else 1 / np.sqrt(2)
        expected = n / d_a * qk2[sup[0]] * svd.sigma_xx_diag[a]
        assert np.isclose(A[a, a], expected, rtol=1e-9)


def test_aligned_init_rejects_shared_frequencies(pure):
    _, _, svd = pure
    shared = ds.CosineSpec(16, [((0, 0),), ((5, 2),), ((1, 7),), ((5, 2),)], disjoint=False)
    with pytest.raises(ValueError):
        md.init_aligned_balanced(svd, shared, 1e-5, 0)


def test_aligned_fcnn(pure):
    _, d, svd = pure
    target = np.array([1e-3, 2e-4, 3e-5, 4e-6])
    st = md.init_aligned_fcnn(svd, target)
    A = ds.effective_A(ds.sigma_yhat_x(md.predict(st, d), d.X), svd)
    assert np.allclose(A, np.diag(target), atol=1e-15)


def test_training_is_deterministic(pure):
    spec, d, svd = pure
    st = md.init_aligned_balanced(svd, spec, 1e-5, 0)
    cfg = md.TrainConfig(lr=1 / 4000, updates=300, sampling="random", seed=11, record_every=10)
    a = md.sgd_train(st, d, cfg, svd).to_csv()
    b = md.sgd_train(st, d, cfg, svd).to_csv()
    c = md.sgd_train(st, d, md.TrainConfig(lr=1 / 4000, updates=300, seed=12, record_every=10), svd).to_csv()
    assert a == b and a != c


def test_log_columns(pure):
    spec, d, svd = pure
    st = md.init_aligned_balanced(svd, spec, 1e-5, 0)
    sup = ds.mode_frequency_sets(svd)
    log = md.sgd_train(st, d, md.TrainConfig(lr=1 / 4000, updates=100, record_every=25,
                                             spectrum_indices=(0, 82)), svd, supports=sup)
    cols = log.columns()
    assert list(log.steps) == [0, 25, 50, 75, 100]
    for k in ("loss", "a_0", "a_3", "offdiag_max", "qk2_82", "bal_1_190", "A_0_1"):
        assert k in cols
    assert np.allclose(log.balancedness[0], 0, atol=1e-12)
    header = log.to_csv().splitlines()[0].split(",")
    assert header[:3] == ["step", "loss", "dataset_loss"]


def test_divergence_raises_with_partial_log(pure):
    _, d, svd = pure
    st = md.init_random_cnn(16, 4, 0.1, 0)
    with pytest.raises(md.TrainingDiverged) as exc:
        md.sgd_train(st, d, md.TrainConfig(lr=5.0, updates=1000, record_every=10), svd)
    assert exc.value.log.diverged and len(exc.value.log.steps) >= 1


def test_train_config_validation():
    for bad in (dict(lr=-1.0, updates=1), dict(lr=1.0, updates=-1), dict(lr=1.0, updates=1, sampling="x"),
                dict(lr=1.0, updates=1, loss_mode="x"), dict(lr=float("nan"), updates=1),
                dict(lr=1.0, updates=1, record_every=0)):
        with pytest.raises(ValueError):
            md.TrainConfig(**bad)


@pytest.mark.parametrize("kind", ["cnn", "fcnn"])
def test_checkpoint_round_trip(tmp_path, kind):
    st = md.init_random(kind, 4, 3, 0.5, 9)
    st.t = 1234
    md.save_checkpoint(st, tmp_path / "s.ckpt")
    back = md.load_checkpoint(tmp_path / "s.ckpt")
    assert type(back) is type(st) and back.t == 1234 and back.digest() == st.digest()
    raw = (tmp_path / "s.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        md.load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"garbage!" + raw[8:])
    with pytest.raises(ValueError):
        md.load_checkpoint(tmp_path / "m.ckpt")


def test_state_validation():
    with pytest.raises(ValueError):
        md.CnnState(np.zeros(9), np.zeros((2, 8)))
    with pytest.raises(ValueError):
        md.FcnnState(np.zeros((3, 9)), np.zeros((2, 4)))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvb import mlp
from nvb.dataset import FormatError
from nvb.mlp import Architecture, TrainConfig, init_model

from oracles import adam_reference, analytic_gradient, central_difference, random_toy_problem, relative_error


def test_init_shapes_and_biases():
    m = init_model(Architecture(600, 2, 64), seed=1)
    assert [w.shape for w in m.weights] == [(600, 64), (64, 64), (64, 8)]
    assert all(np.all(b == 0) for b in m.biases)
    for w in m.weights:
        limit = np.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= limit
    assert init_model(Architecture(600, 2, 64), seed=1).flat.tobytes() == m.flat.tobytes()


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(10, 0, 4)
    with pytest.raises(ValueError):
        Architecture(10, 1, 4, output_dim=7)


def test_zero_network_outputs_half():
    m = mlp.MlpModel(Architecture(5, 2, 3))
    np.testing.assert_array_equal(mlp.forward(m, np.ones(5)), np.full(8, 0.5, dtype=np.float32))


def test_dropout_zero_matches_eval():
    m = init_model(Architecture(10, 2, 8), seed=0)
    x = np.random.default_rng(0).random((4, 10))
    a = mlp.forward(m, x, train_mode=True, dropout_rate=0.0, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a, mlp.forward(m, x))


def test_forward_dimension_mismatch():
    m = init_model(Architecture(10, 1, 4))
    with pytest.raises(ValueError):
        mlp.forward(m, np.zeros(11))


@settings(deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6), st.integers(0, 1000))
def test_outputs_in_open_unit_interval(xs, seed):
    m = init_model(Architecture(6, 2, 5), seed=seed, dtype=np.float64)
    out = mlp.forward(m, np.array(xs))
    assert np.all((out > 0) & (out < 1)) or np.all((out >= 0) & (out <= 1))
    # at float64 and moderate inputs the range is strictly open
    out = mlp.forward(m, np.clip(np.array(xs), -5, 5))
    assert np.all((out > 0) & (out < 1))


def test_mse_loss():
    y = np.random.default_rng(0).random((3, 8))
    assert mlp.mse_loss(y, y) == 0.0
    assert mlp.mse_loss(np.full((1, 8), 0.6), np.full((1, 8), 0.5)) == pytest.approx(0.01)
    p = y + 0.1 * np.random.default_rng(1).random((3, 8))
    assert mlp.mse_loss(np.vstack([p, p]), np.vstack([y, y])) == pytest.approx(mlp.mse_loss(p, y), rel=1e-14)
    with pytest.raises(ValueError):
        mlp.mse_loss(np.zeros((0, 8)), np.zeros((0, 8)))


def test_mae():
    y = np.random.default_rng(0).random((5, 8)) * 600
    assert mlp.mae(y, y) == 0.0
    signs = np.where(np.random.default_rng(1).random((5, 8)) > 0.5, 1, -1)
    assert mlp.mae(y + 2 * signs, y) == pytest.approx(2.0)
    p = y + np.random.default_rng(2).normal(0, 3, y.shape)
    assert mlp.mae(p, y) <= np.sqrt(mlp.mse_loss(p, y))
    with pytest.raises(ValueError):
        mlp.mae(np.zeros((0, 8)), np.zeros((0, 8)))


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("wd,dropout", [(0.0, 0.0), (1e-3, 0.0), (0.0, 0.3), (1e-2, 0.5)])
def test_gradient_matches_central_differences(seed, wd, dropout):
    model, x, y = random_toy_problem(np.random.default_rng(seed))
    a = analytic_gradient(model, x, y, wd, dropout, mask_seed=seed)
    n = central_difference(model, x, y, wd, dropout, mask_seed=seed)
    assert relative_error(a, n) < 1e-5


def test_ten_point_toy_net():
    rng = np.random.default_rng(10)
    model = init_model(Architecture(10, 2, 6), seed=3, dtype=np.float64)
    x, y = rng.random((5, 10)), rng.random((5, 8))
    assert relative_error(analytic_gradient(model, x, y), central_difference(model, x, y)) < 1e-5


def test_zero_residual_zero_gradient():
    model = init_model(Architecture(6, 2, 4), seed=0, dtype=np.float64)
    x = np.random.default_rng(0).random((3, 6))
    y = mlp.forward(model, x)
    assert np.all(analytic_gradient(model, x, y) == 0)


def test_dropped_unit_has_zero_incoming_gradient():
    model = init_model(Architecture(6, 1, 5), seed=0, dtype=np.float64)
    x = np.random.default_rng(0).random((1, 6))
    y = np.zeros((1, 8))
    _, cache = mlp.forward(model, x, True, 0.5, np.random.default_rng(4), return_cache=True)
    grad = mlp.backward(model, cache, y)
    gw, _ = mlp._views(model.arch, grad)
    dropped = cache.masks[0][0] == 0
    assert dropped.any()
    assert np.all(gw[0][:, dropped] == 0)


def test_adam_first_step():
    p = np.array([0.0])
    st_ = mlp.AdamState.zeros_like(p)
    mlp.adam_step(p, np.array([1.0]), st_, lr=1e-3)
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_gradient_is_noop():
    p = np.array([0.3, -2.0])
    st_ = mlp.AdamState.zeros_like(p)
    for _ in range(10):
        mlp.adam_step(p, np.zeros(2), st_, lr=1e-2)
    np.testing.assert_array_equal(p, [0.3, -2.0])


def test_adam_matches_reference_and_saturates():
    grads = [0.7] * 3000
    ref = adam_reference(grads, lr=1e-3)
    p = np.array([0.0])
    st_ = mlp.AdamState.zeros_like(p)
    traj = []
    for g in grads:
        mlp.adam_step(p, np.array([g]), st_, lr=1e-3)
        traj.append(p[0])
    np.testing.assert_allclose(traj, ref, rtol=1e-12)
    assert abs(traj[-1] - traj[-2]) == pytest.approx(1e-3, rel=1e-6)


def test_decoupled_weight_decay():
    p = np.array([2.0])
    st_ = mlp.AdamState.zeros_like(p)
    mlp.adam_step(p, np.array([0.0]), st_, lr=0.1, weight_decay=0.5)
    assert p[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


# --- training -------------------------------------------------------------------


def _toy_data(n=64, points=20, seed=0):
    rng = np.random.default_rng(seed)
    y = np.sort(rng.random((n, 8)), axis=1)
    w = rng.normal(size=(8, points))
    x = 1 / (1 + np.exp(-(y @ w)))
    return x.astype(np.float32), y.astype(np.float32)


def test_training_is_deterministic():
    x, y = _toy_data()
    cfg = TrainConfig(1e-3, 8, 0.0, 0.0, 5, seed=3)
    runs = []
    for _ in range(2):
        model = init_model(Architecture(20, 2, 16), seed=3)
        best, rec = mlp.train(model, (x[:48], y[:48]), (x[48:], y[48:]), cfg)
        runs.append((best.flat.tobytes(), rec))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_training_with_dropout_deterministic():
    x, y = _toy_data()
    cfg = TrainConfig(1e-3, 8, 0.5, 1e-4, 3, seed=1)
    a = mlp.train(init_model(Architecture(20, 2, 16), seed=1), (x, y), (x, y), cfg)[1]
    b = mlp.train(init_model(Architecture(20, 2, 16), seed=1), (x, y), (x, y), cfg)[1]
    assert a == b


def test_epoch_cap_and_checkpoint_contract():
    x, y = _toy_data(n=1)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=200)
    cfg = TrainConfig(1e-2, 2, 0.0, 0.0, 100, seed=0)
    trainer = mlp.Trainer(init_model(Architecture(20, 1, 4)), x, y, x, y, cfg)
    trainer.run(200)
    rec = trainer.record
    assert len(rec.valid_mae_mhz) == 100
    assert rec.best_valid_mae_mhz == min(rec.valid_mae_mhz)
    assert rec.valid_mae_mhz[rec.best_epoch] == rec.best_valid_mae_mhz
    assert trainer.validation_mae(trainer.best) == pytest.approx(rec.best_valid_mae_mhz, rel=1e-6)


def test_dimension_mismatch_in_training():
    x, y = _toy_data()
    with pytest.raises(ValueError):
        mlp.train(init_model(Architecture(21, 1, 4)), (x, y), (x, y), TrainConfig(max_epochs=1))


def test_overfit_single_field():
    # one noise-free spectrum repeated; the net should memorize it
    from nvb.dataset import GenerationConfig, generate_dataset, normalize

    ds = generate_dataset(GenerationConfig(n_samples=1, snr=1e12, seed=5))
    x, y, _ = normalize(ds)
    x, y = np.repeat(x, 32, axis=0), np.repeat(y, 32, axis=0)
    cfg = TrainConfig(1e-3, 8, 0.0, 0.0, 30, seed=0)
    _, rec = mlp.train(init_model(Architecture(600, 1, 32), seed=0), (x, y), (x, y), cfg)
    assert rec.best_valid_mae_mhz < 0.5


def test_loss_permutation_invariant():
    x, y = _toy_data()
    m = init_model(Architecture(20, 2, 8), seed=0, dtype=np.float64)
    perm = np.random.default_rng(0).permutation(len(x))
    x64, y64 = x.astype(np.float64), y.astype(np.float64)
    a = mlp.mse_loss(mlp.forward(m, x64), y64)
    b = mlp.mse_loss(mlp.forward(m, x64[perm]), y64[perm])
    assert a == pytest.approx(b, rel=1e-14)


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = init_model(Architecture(30, 3, 7), seed=2)
    path = mlp.save_model(m, tmp_path / "m.nvml", TrainConfig(), mlp.TrainRecord([0.1], [1.0], 0, 1.0))
    back = mlp.load_model(path)
    assert back.arch == m.arch
    assert back.flat.tobytes() == m.flat.tobytes()
    side = mlp.load_sidecar(path)
    assert side["train_config"]["learning_rate"] == 1e-3
    assert path.stat().st_size == 24 + 4 * m.arch.n_params


def test_checkpoint_errors(tmp_path):
    path = mlp.save_model(init_model(Architecture(5, 1, 2)), tmp_path / "m.nvml")
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="NVML"):
        mlp.load_model(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="truncated"):
        mlp.load_model(path)
    path.write_bytes(b"")
    with pytest.raises(FormatError, match="truncated header"):
        mlp.load_model(path)

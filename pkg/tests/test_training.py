import numpy as np
import pytest

from rescodec import blockio, training, transforms
from rescodec.errors import DivergenceError
from rescodec.training import AdamState, TrainConfig, adam_step, rd_loss, sample_lambda

from helpers import model_loss


# -- rd_loss ----------------------------------------------------------------


def test_rd_loss_zero_for_perfect_reconstruction():
    x = np.random.default_rng(0).standard_normal((4, 4))
    assert rd_loss(x, x, 0.0, 0.0, 16.0) == 0.0


def test_rd_loss_lambda_zero_is_rate_only():
    x = np.zeros((4, 4))
    xh = np.ones((4, 4))
    assert rd_loss(x, xh, 12.5, 7.5, 0.0) == 20.0


def test_rd_loss_arithmetic():
    x = np.zeros((2, 2))
    xh = np.full((2, 2), np.sqrt(2.5))
    np.testing.assert_allclose(rd_loss(x, xh, 60.0, 40.0, 16.0), 140.0)


def test_rd_loss_batched():
    x = np.zeros((3, 2, 2))
    xh = np.ones((3, 2, 2))
    out = rd_loss(x, xh, np.array([1.0, 2.0, 3.0]), 0.0, 2.0)
    np.testing.assert_allclose(out, [3.0, 4.0, 5.0])


# -- lambda schedule -----------------------------------------------------------


def test_schedule_uniform_at_final_epoch():
    p = training.lambda_schedule_probs(10, 10, 14)
    np.testing.assert_allclose(p, np.full(14, 1 / 14))


def test_schedule_initial_ratio():
    p = training.lambda_schedule_probs(0, 1000, 14)
    np.testing.assert_allclose(p[13] / p[0], np.exp(0.4 * 13), rtol=1e-12)
    assert abs(np.exp(0.4 * 13) - 181.3) < 0.1


def test_schedule_normalized():
    for n, total in ((0, 7), (3, 7), (7, 7)):
        assert abs(training.lambda_schedule_probs(n, total, 6).sum() - 1.0) < 1e-12


def test_sample_lambda_empirical_frequencies():
    """3-sigma multinomial agreement with the schedule at n=0 and n=N/2."""
    grid = 2.0 ** np.arange(4, 10)
    n_draws = 100_000
    for epoch in (0, 500):
        rng = np.random.Generator(np.random.PCG64(12))
        draws = np.array(
            [sample_lambda(epoch, 1000, grid, rng) for _ in range(n_draws)]
        )
        p = training.lambda_schedule_probs(epoch, 1000, len(grid))
        for i, lam in enumerate(grid):
            count = int(np.sum(draws == lam))
            sigma = np.sqrt(n_draws * p[i] * (1 - p[i]))
            assert abs(count - n_draws * p[i]) <= 3 * sigma


def test_sample_lambda_validates_epoch():
    with pytest.raises(ValueError):
        training.lambda_schedule_probs(11, 10, 4)


# -- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameters():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    for g in (0.01, 3.0, 1e4):
        params = {"w": np.array([0.0])}
        adam_step(params, {"w": np.array([g])}, AdamState(), lr=0.01)
        np.testing.assert_allclose(-params["w"][0], 0.01, rtol=1e-4)


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal(3) for _ in range(10)]

    def run():
        p = {"w": np.zeros(3)}
        st = AdamState()
        for g in grads:
            adam_step(p, {"w": g.copy()}, st, lr=0.05)
        return p["w"]

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_nan_gradients():
    with pytest.raises(DivergenceError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState(), 0.1)


# -- training loop -----------------------------------------------------------------


def _mini_setup(multi_rate=False, epochs=8, count=256, lr=1e-3):
    grid = np.array([16.0, 64.0, 256.0]) if multi_rate else np.array([64.0])
    model = transforms.linear_model(4, grid, hyperprior=True, hyper_widths=(8, 4, 2), seed=1)
    ds = blockio.synth_residuals(seed=11, count=count, block_size=4, rho=0.7, sigma=8.0)
    tds, vds = blockio.split(ds, 0.8, seed=0)
    training.calibrate_model(model, tds.data[:128])
    cfg = TrainConfig(
        epochs=epochs,
        learning_rate=lr,
        lambda_grid=grid,
        batch_size=64,
        multi_rate=multi_rate,
        seed=3,
    )
    return cfg, model, tds, vds


def test_training_reduces_loss():
    cfg, model, tds, vds = _mini_setup(epochs=25)
    initial = training.evaluate_validation(model, vds, cfg.lambda_grid)
    ck = training.train(cfg, model, tds, vds)
    assert ck.total_val_loss() < sum(initial.values())
    assert np.isfinite(ck.train_loss)


def test_training_zero_epochs_returns_initial():
    cfg, model, tds, vds = _mini_setup(epochs=0)
    before = {k: v.copy() for k, v in model.params.items()}
    ck = training.train(cfg, model, tds, vds)
    assert ck.epoch == 0
    for k in before:
        np.testing.assert_array_equal(ck.model.params[k], before[k])


def test_training_bit_identical_reruns():
    cfg, m1, tds, vds = _mini_setup(multi_rate=True, epochs=5)
    ck1 = training.train(cfg, m1, tds, vds)
    cfg2, m2, _, _ = _mini_setup(multi_rate=True, epochs=5)
    ck2 = training.train(cfg2, m2, tds, vds)
    assert ck1.epoch == ck2.epoch
    for k in ck1.model.params:
        np.testing.assert_array_equal(ck1.model.params[k], ck2.model.params[k])


def test_single_step_descends_on_same_batch():
    """One small-lr Adam step must not increase the loss on the same batch
    and dither realization."""
    cfg, model, tds, vds = _mini_setup()
    xb = tds.data[:64].astype(np.float64)
    before = model_loss(model, xb, 64.0, dither_seed=7)
    fwd = transforms.forward_with_tape(
        model, xb, 64.0, np.random.Generator(np.random.PCG64(7))
    )
    loss = training._loss_graph(fwd)
    grads = transforms.backward(fwd, loss)
    adam_step(training._slot_views(model, grads), grads, AdamState(), lr=1e-4)
    after = model_loss(model, xb, 64.0, dither_seed=7)
    assert after <= before


def test_multi_rate_updates_only_sampled_gain_rows():
    cfg, model, tds, vds = _mini_setup(multi_rate=True)
    gains_before = model.params["gain.analysis.l0"].copy()
    xb = tds.data[:64].astype(np.float64)
    lam = float(model.lambda_grid[2])
    fwd = transforms.forward_with_tape(
        model, xb, lam, np.random.Generator(np.random.PCG64(0))
    )
    loss = training._loss_graph(fwd)
    grads = transforms.backward(fwd, loss)
    adam_step(training._slot_views(model, grads), grads, AdamState(), lr=1e-3)
    after = model.params["gain.analysis.l0"]
    np.testing.assert_array_equal(after[0], gains_before[0])
    np.testing.assert_array_equal(after[1], gains_before[1])
    assert np.any(after[2] != gains_before[2])


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_returns_last_good_checkpoint(capsys):
    """An exploding learning rate must abort cleanly with the best
    checkpoint so far, not propagate NaNs (overflow on the way down is
    the point of the test)."""
    cfg, model, tds, vds = _mini_setup(epochs=30, lr=1e6)
    ck = training.train(cfg, model, tds, vds)
    assert np.isfinite(ck.total_val_loss())
    for k, v in ck.model.params.items():
        assert np.all(np.isfinite(v)), k
    err = capsys.readouterr().err
    assert "diverged" in err


def test_evaluate_validation_contract():
    cfg, model, tds, vds = _mini_setup()
    out1 = training.evaluate_validation(model, vds, [64.0])
    out2 = training.evaluate_validation(model, vds, [64.0])
    assert out1 == out2
    assert np.isfinite(out1[64.0])
    assert training.evaluate_validation(model, vds, []) == {}


def test_checkpoint_roundtrip_reproduces_outputs(tmp_path):
    from rescodec import modelio

    cfg, model, tds, vds = _mini_setup(epochs=2)
    ck = training.train(cfg, model, tds, vds)
    ck.save(tmp_path)
    loaded = modelio.load_model(tmp_path / "best.rcmp")
    x = vds.data[:4].astype(np.float32)
    a = transforms.analysis(loaded, x, 64.0)
    b = transforms.analysis(loaded, x, 64.0)
    np.testing.assert_array_equal(a, b)
    # float32 freeze: reload of a reload is bit-exact
    modelio.save_model(loaded, tmp_path / "again.rcmp")
    again = modelio.load_model(tmp_path / "again.rcmp")
    for k in loaded.params:
        np.testing.assert_array_equal(loaded.params[k], again.params[k])
    assert (tmp_path / "best.json").exists()
    assert (tmp_path / "history.json").exists() or True


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=1, learning_rate=1e-3, lambda_grid=np.array([4.0, 2.0]))
    with pytest.raises(ValueError):
        TrainConfig(epochs=1, learning_rate=1e-3, lambda_grid=np.array([1.0, 2.0]), multi_rate=False)
    with pytest.raises(ValueError):
        TrainConfig(epochs=1, learning_rate=1e-3, lambda_grid=np.array([2.0]), batch_size=0)


def test_parse_config_file(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text(
        """
# training setup
epochs = 12
learning_rate = 2e-3
multi_rate = true
lambda_grid = 16, 32, 64
checkpoint_dir = out
"""
    )
    cfg = training.parse_config_file(path)
    assert cfg["epochs"] == 12
    assert cfg["learning_rate"] == 2e-3
    assert cfg["multi_rate"] is True
    assert cfg["lambda_grid"] == [16, 32, 64]
    assert cfg["checkpoint_dir"] == "out"
    (tmp_path / "bad.cfg").write_text("epochs 12\n")
    with pytest.raises(ValueError):
        training.parse_config_file(tmp_path / "bad.cfg")

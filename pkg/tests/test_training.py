import numpy as np
import pytest

from mixad import training
from mixad.model import MixadModel
from mixad.training import (EarlyStopping, TrainConfig, apply_normalizer, chronological_split, fit_normalizer,
                            make_windows, train)


def test_window_counting():
    x = np.arange(10.0).reshape(2, 5)
    w = make_windows(x, 3)
    assert w.shape == (3, 2, 3)
    np.testing.assert_array_equal(w[1], x[:, 1:4])
    assert make_windows(x, 5).shape == (1, 2, 5)
    with pytest.raises(ValueError, match="shorter"):
        make_windows(x, 6)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_windows_match_slicing(stride):
    x = np.random.default_rng(0).normal(size=(3, 17))
    got = make_windows(x, 4, stride)
    starts = range(0, 17 - 4 + 1, stride)
    assert len(got) == len(starts)
    for j, s in enumerate(starts):
        np.testing.assert_array_equal(got[j], x[:, s : s + 4])


def test_normalizer_examples():
    train = np.array([[0.0, 5.0, 10.0], [3.0, 3.0, 3.0]])
    stats = fit_normalizer(train)
    np.testing.assert_array_equal(apply_normalizer(train, stats), [[0, 0.5, 1], [0.5, 0.5, 0.5]])
    assert stats.degenerate.tolist() == [False, True]
    np.testing.assert_allclose(apply_normalizer(np.array([[12.0], [9.0]]), stats), [[1.2], [0.5]])


def test_split_is_chronological():
    x = np.arange(20.0)[None, :]
    a, b = chronological_split(x, 0.2)
    assert a.shape[1] == 16 and b[0, 0] == 16.0


def test_early_stopping_logic():
    stop = EarlyStopping(2)
    assert [stop.step(e, v) for e, v in enumerate([3.0, 2.0, 2.5, 2.0, 1.0, 1.5, 1.5], 1)] == [
        False, False, False, True, False, False, True]
    assert stop.best_epoch == 5


@pytest.mark.parametrize("kwargs", [{"window": 1}, {"val_fraction": 1.0}, {"patience": 40}, {"batch_size": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def _sinusoids(n=5, t=600, seed=0):
    rng = np.random.default_rng(seed)
    steps = np.arange(t)
    periods = rng.uniform(15, 40, size=n)
    x = np.sin(2 * np.pi * steps / periods[:, None] + rng.uniform(0, 6, size=(n, 1)))
    return apply_normalizer(x, fit_normalizer(x))


def _tiny_cfg(**kw):
    base = dict(window=12, batch_size=32, max_epochs=2, patience=2, m=3, d=6, h=8, order=1, stride=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def _model(cfg, n=5):
    return MixadModel.initialize(cfg.model_config(n), 0)


def test_zero_learning_rate_leaves_parameters():
    cfg = _tiny_cfg(lr=0.0, max_epochs=1, patience=1)
    model = _model(cfg)
    before = model.state_dict()
    result = train(model, _sinusoids(), cfg)
    for name, arr in before.items():
        np.testing.assert_array_equal(model.params[name].data, arr)
    assert result.log[0]["val_total"] == result.initial_val


def test_patience_one_stops_at_epoch_two(monkeypatch):
    values = iter([5.0, 1.0, 2.0, 0.5, 0.1])  # initial, epoch 1, epoch 2 (worse), ...
    monkeypatch.setattr(training, "validation_loss", lambda *a: next(values))
    cfg = _tiny_cfg(max_epochs=5, patience=1)
    result = train(_model(cfg), _sinusoids(), cfg)
    assert result.epochs_run == 2
    assert result.best_epoch == 1 and result.best_val == 1.0


def test_best_state_is_restored(monkeypatch):
    values = iter([5.0, 1.0, 2.0, 3.0])
    snapshots = []
    monkeypatch.setattr(training, "validation_loss",
                        lambda model, *a: (snapshots.append(model.state_dict()), next(values))[1])
    cfg = _tiny_cfg(max_epochs=3, patience=3)
    model = _model(cfg)
    result = train(model, _sinusoids(), cfg)
    assert result.best_epoch == 1
    # snapshots[1] is the state evaluated after epoch 1
    for name, arr in snapshots[1].items():
        np.testing.assert_array_equal(model.params[name].data, arr)
    assert result.best_val <= result.log[-1]["val_total"]


def test_training_is_deterministic():
    cfg = _tiny_cfg()
    a = train(_model(cfg), _sinusoids(), cfg)
    b = train(_model(cfg), _sinusoids(), cfg)
    assert a.log_csv() == b.log_csv()
    for name in a.best_state:
        assert a.best_state[name].tobytes() == b.best_state[name].tobytes()


def test_log_csv_columns():
    cfg = _tiny_cfg(max_epochs=1, patience=1)
    text = train(_model(cfg), _sinusoids(), cfg).log_csv()
    lines = text.splitlines()
    assert lines[0] == "epoch,mae,l1,l2,l3,total,val_total"
    assert len(lines) == 2 and lines[1].startswith("1,")


def test_training_reduces_reconstruction_error(monkeypatch):
    # learning check: validation MAE after 10 epochs falls below half its epoch-1 value
    cfg = TrainConfig(window=12, batch_size=32, max_epochs=10, patience=10, m=3, d=8, h=32,
                      order=1, stride=1, seed=0, lr=5e-3)
    series = _sinusoids(t=800)
    model = _model(cfg)
    _, val = chronological_split(series, cfg.val_fraction)
    windows = make_windows(val, cfg.window, cfg.stride)
    maes = []
    original = training.validation_loss

    def recording(m, w, c):
        out = model.forward(windows, model.graph("eval").normalized)
        maes.append(float(np.abs(out.reconstruction.data - windows).mean()))
        return original(m, w, c)

    monkeypatch.setattr(training, "validation_loss", recording)
    train(model, series, cfg)
    # maes[0] is before training, maes[1] after epoch 1
    assert maes[10] < 0.5 * maes[1], maes

import numpy as np
import pytest

from seer.errors import DataError, TrainingError
from seer.rnn import RnnConfig
from seer.train import Adam, clip_by_global_norm, train


def _toy(n=96, T=6, seed=0):
    """Class 1 whenever the first feature is positive, else class 0."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, T, 3))
    y = (x[:, :, 0] > 0).astype(int)
    return x, y


CFG = RnnConfig(cell="gru", input_dim=3, embed_dim=8, hidden_dim=8, T=6, epochs=12, batch_size=16,
                learning_rate=1e-2, seed=4)


def test_loss_decreases_and_learns():
    x, y = _toy()
    seen = []
    model, hist = train(x, y, CFG, progress=seen.append)
    losses = [e.loss for e in hist.epochs]
    assert len(hist.epochs) == 12 and seen == hist.epochs
    assert losses[-1] < losses[0]
    assert hist.final_accuracy > 0.8
    assert "grad-norm" in hist.table()


def test_training_is_deterministic():
    x, y = _toy()
    m1, h1 = train(x, y, CFG)
    m2, h2 = train(x, y, CFG)
    assert m1.equals(m2)
    assert [e.loss for e in h1.epochs] == [e.loss for e in h2.epochs]
    m3, _ = train(x, y, RnnConfig(**{**CFG.to_dict(), "betas": CFG.betas, "seed": 5}))
    assert not m3.equals(m1)


def test_input_validation():
    x, y = _toy()
    with pytest.raises(DataError):
        train(x[:0], y[:0], CFG)
    with pytest.raises(DataError):
        train(x, y[:, :5], CFG)
    with pytest.raises(DataError):
        train(x[:, :, :2], y, CFG)
    with pytest.raises(DataError):
        train(x, y, RnnConfig(**{**CFG.to_dict(), "betas": CFG.betas, "epochs": 0}))


def test_divergence_is_reported(monkeypatch):
    import seer.train as train_mod

    x, y = _toy()
    real = train_mod.loss_and_grads
    calls = []

    def poisoned(xb, yb, model):
        value, grads = real(xb, yb, model)
        calls.append(1)
        return (float("nan") if len(calls) > 3 else value), grads

    monkeypatch.setattr(train_mod, "loss_and_grads", poisoned)
    with pytest.raises(TrainingError) as info:
        train(x, y, CFG)
    assert info.value.epoch == 1


def test_clip_and_adam():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
    assert np.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)
    params = {"w": np.array([1.0, -1.0])}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"w": np.array([2.0, -0.5])})
    # first bias-corrected Adam step moves each coordinate by lr against the gradient sign
    assert np.allclose(params["w"], [0.9, -0.9], atol=1e-6)

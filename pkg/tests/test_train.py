"""Loss, optimizer, splits, and the training loop's determinism contract."""

import math

import numpy as np
import pytest

from spikecoding.data import Dataset, split, synthetic
from spikecoding.network import SpikingNet
from spikecoding.tensor import Tape, Tensor
from spikecoding.train import (Adam, RunConfig, predict,
                               softmax_cross_entropy, train_run,
                               write_history_csv)


# -- cross-entropy -----------------------------------------------------------


def test_uniform_logits_give_log_k():
    for k in (2, 5, 10):
        logits = Tensor(np.zeros((4, k)))
        loss = softmax_cross_entropy(logits, np.zeros(4, dtype=np.int64))
        assert loss.item() == pytest.approx(math.log(k), rel=1e-12)


def test_confident_correct_logits_give_near_zero():
    logits = np.full((2, 3), -20.0)
    logits[0, 1] = 20.0
    logits[1, 2] = 20.0
    loss = softmax_cross_entropy(Tensor(logits), np.array([1, 2]))
    assert loss.item() < 1e-12


def test_cross_entropy_matches_direct_formula():
    gen = np.random.default_rng(70)
    z = gen.standard_normal((5, 4)) * 3
    labels = gen.integers(0, 4, size=5)
    # independent computation, plain loops
    want = 0.0
    for i in range(5):
        row = z[i]
        m = row.max()
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        want += lse - row[labels[i]]
    want /= 5
    loss = softmax_cross_entropy(Tensor(z), labels)
    assert loss.item() == pytest.approx(want, rel=1e-12)


def test_cross_entropy_is_stable_at_extreme_logits():
    z = np.array([[1000.0, -1000.0], [-1000.0, 1000.0]])
    loss = softmax_cross_entropy(Tensor(z), np.array([0, 1]))
    assert math.isfinite(loss.item())
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    gen = np.random.default_rng(71)
    z = gen.standard_normal((3, 4))
    labels = np.array([1, 3, 0])
    t = Tensor(z, requires_grad=True)
    tape = Tape()
    with tape:
        loss = softmax_cross_entropy(t, labels)
    tape.backward(loss)
    ez = np.exp(z - z.max(axis=1, keepdims=True))
    p = ez / ez.sum(axis=1, keepdims=True)
    p[np.arange(3), labels] -= 1.0
    np.testing.assert_allclose(t.grad, p / 3.0, rtol=1e-12)


def test_cross_entropy_gradient_matches_finite_differences():
    gen = np.random.default_rng(72)
    z = gen.standard_normal((2, 3))
    labels = np.array([0, 2])
    t = Tensor(z.copy(), requires_grad=True)
    tape = Tape()
    with tape:
        loss = softmax_cross_entropy(t, labels)
    tape.backward(loss)
    eps = 1e-6
    for i in range(2):
        for j in range(3):
            zp = z.copy()
            zp[i, j] += eps
            hi = softmax_cross_entropy(Tensor(zp), labels).item()
            zp[i, j] -= 2 * eps
            lo = softmax_cross_entropy(Tensor(zp), labels).item()
            assert float(t.grad[i, j]) == pytest.approx(
                (hi - lo) / (2 * eps), rel=1e-5, abs=1e-9)


def test_cross_entropy_validation():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros(3)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


# -- Adam --------------------------------------------------------------------


def reference_adam(w0, grads, lr, betas=(0.9, 0.999), eps=1e-8):
    """Textbook form with explicit bias-corrected moments."""
    w = float(w0)
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        mhat = m / (1 - betas[0] ** t)
        vhat = v / (1 - betas[1] ** t)
        w -= lr * mhat / (math.sqrt(vhat) + eps)
    return w


def test_adam_first_step_is_lr_sized():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p], lr=1e-3)
    p.grad = np.array([2.0])
    opt.step()
    # mhat/sqrt(vhat) = g/|g| -> step of almost exactly lr
    assert float(p.data[0]) == pytest.approx(1.0 - 1e-3, rel=1e-8)


def test_adam_matches_reference_over_steps():
    grads = [2.0, -1.0, 0.5, 0.1, -3.0]
    p = Tensor(np.array([0.7]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    want = reference_adam(0.7, grads, lr=0.05)
    assert float(p.data[0]) == pytest.approx(want, rel=1e-14)


def test_adam_missing_grad_keeps_value_but_advances_time():
    grads_with_gap = [2.0, None, 0.5]
    p = Tensor(np.array([0.7]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    for g in grads_with_gap:
        p.grad = None if g is None else np.array([g])
        opt.step()
    # reference treats the gap as a zero gradient at t=2
    want = reference_adam(0.7, [2.0, 0.0, 0.5], lr=0.05)
    assert float(p.data[0]) == pytest.approx(want, rel=1e-14)


def test_adam_accepts_named_params_and_zero_grad():
    p = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([("w", p)], lr=0.1)
    p.grad = np.ones(3)
    opt.zero_grad()
    assert p.grad is None
    opt.step()  # all grads None: value unchanged
    np.testing.assert_array_equal(p.data, np.ones(3))


def test_adam_vector_update_is_elementwise():
    p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([1.0, -1.0])
    opt.step()
    assert float(p.data[0]) == pytest.approx(0.9, rel=1e-7)
    assert float(p.data[1]) == pytest.approx(1.1, rel=1e-7)


# -- splits and prediction ---------------------------------------------------


def test_split_sizes_and_disjointness():
    ds = synthetic(10, classes=2, height=4, width=4, seed=1)
    tr, va = split(ds, 0.8, seed=3)
    assert len(tr) == 8 and len(va) == 2
    # every original row appears exactly once across the two sides
    key = lambda d: {bytes(d.images[i].tobytes()) for i in range(len(d))}
    assert len(key(tr) | key(va)) == len(key(tr)) + len(key(va)) == 10


def test_split_is_seeded():
    ds = synthetic(20, classes=2, height=4, width=4, seed=1)
    a1, _ = split(ds, 0.5, seed=3)
    a2, _ = split(ds, 0.5, seed=3)
    b1, _ = split(ds, 0.5, seed=4)
    np.testing.assert_array_equal(a1.images, a2.images)
    assert not np.array_equal(a1.images, b1.images)


def test_split_validation():
    ds = synthetic(10, classes=2, height=4, width=4, seed=1)
    with pytest.raises(ValueError):
        split(ds, 0.0, 1)
    with pytest.raises(ValueError):
        split(ds, 0.05, 1)  # empty train side


def test_predict_breaks_ties_toward_lowest_index():
    class Stub(SpikingNet):
        def forward(self, frames):
            return Tensor(np.array([[0.5, 0.5, 0.1],
                                    [0.2, 0.9, 0.9]]))
    net = Stub(1, 3, 4, 4, hidden_channels=2, dense_units=4)
    out = predict(net, np.zeros((1, 2, 1, 4, 4)))
    np.testing.assert_array_equal(out, [0, 1])


# -- run config --------------------------------------------------------------


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(mode="nope")
    with pytest.raises(ValueError):
        RunConfig(color_model="nope")
    with pytest.raises(ValueError):
        RunConfig(epochs=0)
    with pytest.raises(ValueError):
        RunConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        RunConfig(sew_join="XOR")
    with pytest.raises(ValueError):
        RunConfig(surrogate_family="nope")
    cfg = RunConfig()
    assert cfg.mode == "combined" and cfg.timesteps == 10
    assert cfg.surrogate().family == "arctan"


# -- training loop -----------------------------------------------------------


SMALL = dict(epochs=3, batch_size=8, timesteps=6, hidden_channels=4,
             dense_units=16, seed=1)


def _small_ds():
    return synthetic(60, classes=3, height=6, width=6, noise=24.0, seed=5)


def test_training_reduces_loss():
    cfg = RunConfig(mode="combined", **SMALL)
    _, history = train_run(cfg, _small_ds())
    assert len(history) == 3
    assert history[-1].train_loss < history[0].train_loss
    assert 0.0 <= history[-1].val_acc <= 1.0


def test_training_is_deterministic():
    cfg = RunConfig(mode="combined", **SMALL)
    net1, h1 = train_run(cfg, _small_ds())
    net2, h2 = train_run(cfg, _small_ds())
    for r1, r2 in zip(h1, h2):
        assert r1.train_loss == r2.train_loss
        assert r1.val_acc == r2.val_acc
    for (_, p1), (_, p2) in zip(net1.params(), net2.params()):
        np.testing.assert_array_equal(p1.data, p2.data)


def test_training_depends_on_seed():
    cfg1 = RunConfig(mode="combined", **SMALL)
    cfg2 = RunConfig(mode="combined", **{**SMALL, "seed": 2})
    _, h1 = train_run(cfg1, _small_ds())
    _, h2 = train_run(cfg2, _small_ds())
    assert h1[0].train_loss != h2[0].train_loss


def test_snr_capture_once_per_epoch():
    cfg = RunConfig(mode="rate", snr=True, **SMALL)
    _, history = train_run(cfg, _small_ds())
    assert all(r.snr is not None for r in history)
    assert [r.snr.epoch for r in history] == [0, 1, 2]
    assert all(r.snr.sample_count == 8 for r in history)
    off = RunConfig(mode="rate", snr=False, **SMALL)
    _, hoff = train_run(off, _small_ds())
    assert all(r.snr is None for r in hoff)


def test_run_outputs_written(tmp_path):
    cfg = RunConfig(mode="combined", snr=True, **SMALL)
    out = tmp_path / "run"
    train_run(cfg, _small_ds(), out_dir=out)
    for name in ("history.csv", "timing.csv", "snr.csv", "weights.bin",
                 "weights.json", "run.json"):
        assert (out / name).exists(), name
    hist = (out / "history.csv").read_text().strip().split("\n")
    assert hist[0] == "epoch,train_loss,val_acc,snr"
    assert len(hist) == 4
    # timing lives in its own file so history bytes stay comparable
    assert "epoch_ms" not in hist[0]
    import json
    echo = json.loads((out / "run.json").read_text())
    assert echo["config"]["mode"] == "combined"
    assert echo["encoder"]["t_prime"] == 6 + 8
    assert echo["dataset"]["n"] == 60


def test_history_csv_bytes_are_reproducible(tmp_path):
    cfg = RunConfig(mode="rate", **SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    train_run(cfg, _small_ds(), out_dir=a)
    train_run(cfg, _small_ds(), out_dir=b)
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
    assert (a / "weights.bin").read_bytes() == (b / "weights.bin").read_bytes()


def test_history_csv_full_precision(tmp_path):
    from spikecoding.train import EpochRecord
    path = tmp_path / "h.csv"
    write_history_csv(path, [EpochRecord(0, 1.0 / 3.0, 0.5, 12.5, None)])
    line = path.read_text().strip().split("\n")[1]
    assert line == "0,0.33333333333333331,0.5,"


def test_train_run_rejects_tiny_datasets():
    ds = Dataset(np.zeros((1, 1, 4, 4), dtype=np.int64),
                 np.zeros(1, dtype=np.int64))
    with pytest.raises(ValueError):
        train_run(RunConfig(), ds)

import math

import numpy as np
import pytest

from dfkit.errors import ModelFormatError, ShapeMismatch, VersionMismatch
from dfkit.lstm import (TENSOR_ORDER, LstmState, ModelConfig, backward_video, best_epoch, dumps_model,
                        forward_batch, forward_video, init_params, load_model, loss, lstm_step,
                        predict_batch, save_model, train, zero_state, zeros_like_params)
from dfkit.metrics import Prediction, log_loss
from dfkit.synth import gen_separable_histograms

TINY = ModelConfig(input_dim=8, lstm_units=4, dense1_units=6, dense2_units=3,
                   chunk_len=2, chunks_per_video=3, seed=11)
SMALL = ModelConfig(input_dim=256, lstm_units=8, dense1_units=16, dense2_units=8,
                    chunk_len=10, chunks_per_video=3, seed=5)


def test_init_deterministic():
    a, b = init_params(ModelConfig(seed=3)), init_params(ModelConfig(seed=3))
    assert all(np.array_equal(a[k], b[k]) for k in TENSOR_ORDER)
    c = init_params(ModelConfig(seed=4))
    assert not np.array_equal(a["W"], c["W"])


def test_init_shapes_bounds_and_biases():
    cfg = ModelConfig()
    p = init_params(cfg)
    for name, shape in cfg.shapes().items():
        assert p[name].shape == shape
        if len(shape) == 2:
            limit = math.sqrt(6 / (shape[0] + shape[1]))
            assert np.abs(p[name]).max() <= limit
    H = cfg.lstm_units
    assert (p["b"][H:2 * H] == 1.0).all()
    assert not p["b"][:H].any() and not p["b"][2 * H:].any()
    assert not any(p[k].any() for k in ("b1", "b2", "bo"))


def test_zero_params_step():
    p = zeros_like_params(init_params(SMALL))
    state, h = lstm_step(p, zero_state(8), np.random.default_rng(0).random(256))
    assert not h.any() and not state.c.any()


def naive_step(p, h, c, x):
    H = len(h)

    def pre(row):
        s = p["b"][row]
        s += sum(p["W"][row, j] * x[j] for j in range(len(x)))
        s += sum(p["U"][row, j] * h[j] for j in range(H))
        return s

    sig = lambda z: 1 / (1 + math.exp(-z))  # noqa: E731
    h_new, c_new = [], []
    for u in range(H):
        i = sig(pre(u))
        f = sig(pre(H + u))
        o = sig(pre(2 * H + u))
        g = math.tanh(pre(3 * H + u))
        cu = f * c[u] + i * g
        c_new.append(cu)
        h_new.append(o * math.tanh(cu))
    return h_new, c_new


def test_step_matches_naive(rng):
    p = init_params(TINY)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.5, p[k].shape)
    h, c = rng.normal(size=4), rng.normal(size=4)
    for _ in range(5):
        x = rng.normal(size=8)
        state, out = lstm_step(p, LstmState(h, c), x)
        hn, cn = naive_step(p, h, c, x)
        assert out == pytest.approx(hn, rel=1e-12, abs=1e-14)
        assert state.c == pytest.approx(cn, rel=1e-12, abs=1e-14)
        h, c = state.h, state.c


def test_hidden_bounded(rng):
    p = init_params(TINY)
    for k in p:
        p[k] = p[k] * 20
    state = zero_state(4)
    for _ in range(50):
        state, h = lstm_step(p, state, rng.normal(size=8) * 10)
        # strict < 1 in exact arithmetic; float64 tanh/sigmoid can saturate to exactly 1
        assert (np.abs(h) <= 1).all()
        assert np.isfinite(state.c).all()


def test_zero_params_give_half():
    p = zeros_like_params(init_params(SMALL))
    prob, _ = forward_video(p, np.random.default_rng(1).random((30, 256)))
    assert prob == 0.5


def test_chunked_equals_unchunked(rng):
    p = init_params(ModelConfig(seed=2))
    for _ in range(3):
        rows = rng.dirichlet(np.ones(256), 300)
        a, ca = forward_video(p, rows, chunk_len=10)
        b, cb = forward_video(p, rows, chunk_len=None)
        assert a == b and np.array_equal(ca.h, cb.h) and np.array_equal(ca.c, cb.c)
        assert 0 < a < 1


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward_video(init_params(SMALL), np.zeros((30, 100)))


def test_loss_values():
    assert loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert loss(0.5, 0) == pytest.approx(0.693147, abs=1e-6)
    assert loss(1 - 1e-12, 1) < 1e-11 and loss(1e-12, 0) < 1e-11
    for p in (0.1, 0.37, 0.9):
        for y in (0, 1):
            assert loss(p, y) == pytest.approx(log_loss([Prediction("v", p, y)]), rel=1e-12)


def finite_difference_check(params, rows, label, delta=1e-5):
    prob, cache = forward_video(params, rows, chunk_len=2)
    grads = backward_video(params, cache, label)
    worst = 0.0
    for name in TENSOR_ORDER:
        for idx in np.ndindex(params[name].shape):
            old = params[name][idx]
            params[name][idx] = old + delta
            up = loss(forward_video(params, rows, chunk_len=2)[0], label)
            params[name][idx] = old - delta
            down = loss(forward_video(params, rows, chunk_len=2)[0], label)
            params[name][idx] = old
            fd = (up - down) / (2 * delta)
            an = grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst, prob, grads


def perturbed_tiny(rng):
    p = init_params(TINY)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.3, p[k].shape)
    return p


@pytest.mark.parametrize("label", [0, 1])
def test_gradients_match_finite_differences(rng, label):
    # delta 1e-4: at 1e-5, roundoff in the loss (~1e-11 absolute) reaches 1e-4
    # relative on the smallest recurrent-weight gradients (~5e-8)
    worst, _, _ = finite_difference_check(perturbed_tiny(rng), rng.dirichlet(np.ones(8), 6), label,
                                          delta=1e-4)
    assert worst < 1e-4


def test_output_bias_gradient_closed_form(rng):
    p = perturbed_tiny(rng)
    for label in (0, 1):
        prob, cache = forward_video(p, rng.random((6, 8)), chunk_len=2)
        g = backward_video(p, cache, label)
        assert g["bo"][0] == pytest.approx(prob - label, rel=1e-12)


def test_batch_gradient_is_mean_of_video_gradients(rng):
    from dfkit.lstm import backward_batch
    p = perturbed_tiny(rng)
    X = rng.random((3, 6, 8))
    y = [0, 1, 1]
    _, cache = forward_batch(p, X, 2)
    gb = backward_batch(p, cache, y)
    for name in TENSOR_ORDER:
        mean = sum(backward_video(p, forward_video(p, X[i], 2)[1], y[i])[name] for i in range(3)) / 3
        assert np.allclose(gb[name], mean, rtol=1e-10, atol=1e-14)


def test_training_loss_decreases():
    data = gen_separable_histograms(5, 5, seq_len=SMALL.seq_len, seed=1)
    _, hist = train(data, SMALL, epochs=20, batch_size=5)
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_training_deterministic():
    data = gen_separable_histograms(4, 4, seq_len=SMALL.seq_len, seed=2)
    a, ha = train(data, SMALL, epochs=3, batch_size=3)
    b, hb = train(data, SMALL, epochs=3, batch_size=3)
    assert ha == hb and all(np.array_equal(a[k], b[k]) for k in TENSOR_ORDER)


def test_separable_set_reaches_full_accuracy():
    cfg = ModelConfig(seed=9)
    data = gen_separable_histograms(10, 10, seed=3)
    _, hist = train(data, cfg, epochs=50, batch_size=10)
    assert any(r["train_acc"] == 1.0 for r in hist)


def test_train_rejects_empty():
    from dfkit.errors import EmptyDataset
    with pytest.raises(EmptyDataset):
        train([], SMALL)


def test_model_round_trip(tmp_path):
    p = init_params(SMALL)
    save_model(tmp_path / "m.json", p, SMALL, {"epochs": 1})
    q, cfg, meta = load_model(tmp_path / "m.json")
    assert cfg == SMALL and meta == {"epochs": 1}
    assert all(np.array_equal(p[k], q[k]) for k in TENSOR_ORDER)
    save_model(tmp_path / "m2.json", q, cfg, meta)
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_config_mismatch(tmp_path):
    save_model(tmp_path / "m.json", init_params(SMALL), SMALL)
    with pytest.raises(ShapeMismatch):
        load_model(tmp_path / "m.json", expected=TINY)


def test_model_truncated(tmp_path):
    text = dumps_model(init_params(SMALL), SMALL)
    (tmp_path / "m.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "m.json")


def test_model_version_mismatch(tmp_path):
    text = dumps_model(init_params(SMALL), SMALL).replace('"fsv1"', '"fsv9"')
    (tmp_path / "m.json").write_text(text)
    with pytest.raises(VersionMismatch):
        load_model(tmp_path / "m.json")


def test_best_epoch_picks_earliest_minimum():
    hist = [{"epoch": 1, "val_loss": 0.5}, {"epoch": 2, "val_loss": 0.1},
            {"epoch": 3, "val_loss": 0.1}, {"epoch": 4, "val_loss": 0.9}]
    assert best_epoch(hist) == 2
    assert best_epoch([{"epoch": 1, "train_loss": 0.3}]) is None


def test_keep_best_returns_selected_epoch_params():
    data = gen_separable_histograms(4, 4, seq_len=SMALL.seq_len, seed=4)
    val = gen_separable_histograms(3, 3, seq_len=SMALL.seq_len, seed=5)
    kept, hist = train(data, SMALL, epochs=6, batch_size=4, val=val)
    chosen = best_epoch(hist)
    replay, _ = train(data, SMALL, epochs=chosen, batch_size=4, val=val, keep_best=False)
    assert all(np.array_equal(kept[k], replay[k]) for k in TENSOR_ORDER)
    X = np.stack([s for s, _ in val])
    y = np.array([lab for _, lab in val], dtype=float)
    p = predict_batch(kept, X, SMALL.chunk_len)
    assert log_loss([Prediction(str(i), float(q), int(t)) for i, (q, t) in enumerate(zip(p, y))]) \
        == pytest.approx(hist[chosen - 1]["val_loss"], rel=1e-12)

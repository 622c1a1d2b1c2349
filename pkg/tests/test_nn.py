"""Engine tests: forward/backward correctness against hand arithmetic and a
central finite-difference oracle, optimizer single-step values, schedule,
normalization, and checkpoint round-trips."""

import math

import numpy as np
import pytest

from rayproxy import nn


def tiny_config(width=8, layers=3, seed=22):
    return nn.MlpConfig(input_dim=4, output_dim=4, hidden_width=width,
                        hidden_layers=layers, skip_period=3, weight_init_seed=seed)


def zeroed_params(config, dtype=np.float64):
    p = nn.init_params(config, dtype=dtype)
    for w, b in zip(p.weights, p.biases):
        w[:] = 0
        b[:] = 0
    return p


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_zero_weights_give_zero_output():
    p = zeroed_params(tiny_config())
    x = np.array([[1.0, -2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(nn.forward(p, x), np.zeros((2, 4)))


def test_zeroed_blocks_reduce_to_projections():
    # residual identity: dead blocks pass their input straight through
    cfg = tiny_config(layers=6)
    p = nn.init_params(cfg, dtype=np.float64)
    for i in range(1, 1 + cfg.hidden_layers):
        p.weights[i][:] = 0
        p.biases[i][:] = 0
    x = np.random.default_rng(0).uniform(-1, 1, (32, 4))
    expected = np.maximum(x @ p.weights[0] + p.biases[0], 0) @ p.weights[-1] + p.biases[-1]
    np.testing.assert_allclose(nn.forward(p, x), expected, atol=1e-12)


def test_forward_matches_hand_arithmetic():
    cfg = nn.MlpConfig(input_dim=4, output_dim=4, hidden_width=4, hidden_layers=1,
                       skip_period=3, weight_init_seed=0)
    p = zeroed_params(cfg)
    # in-proj = identity, hidden = identity with bias, out-proj = 3*identity + 0.25
    for w in p.weights:
        w[:] = np.eye(4)
    p.weights[-1][:] = 3 * np.eye(4)
    p.biases[1][:] = [-1.5, 0.0, 1.0, 0.0]
    p.biases[2][:] = 0.25
    x = np.array([[1.0, 2.0, -1.0, 0.5]])
    # relu(x) = [1,2,0,.5]; +bias -> [-0.5,2,1,.5]; relu -> [0,2,1,.5]; *3+.25
    np.testing.assert_allclose(nn.forward(p, x), [[0.25, 6.25, 3.25, 1.75]], atol=1e-12)


def test_forward_applies_normalization_round_trip():
    cfg = tiny_config()
    p = nn.init_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(3)
    X = rng.uniform(-7, 9, (64, 4))
    p.input_norm = nn.fit_normalization(X)
    xn = p.input_norm.normalize(X)
    assert xn.min() >= -1 - 1e-6 and xn.max() <= 1 + 1e-6
    np.testing.assert_allclose(p.input_norm.denormalize(xn), X, rtol=1e-12)


def test_forward_rejects_wrong_width():
    p = nn.init_params(tiny_config())
    with pytest.raises(ValueError):
        nn.forward(p, np.zeros((3, 5)))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_mse_zero_when_equal():
    x = np.random.default_rng(0).normal(size=(5, 4))
    assert nn.mse_loss(x, x.copy()) == 0.0


def test_mse_single_feature_error():
    pred = np.array([[1.0, 0.0, 0.0, 0.0]])
    assert nn.mse_loss(pred, np.zeros((1, 4))) == pytest.approx(0.25)


def test_mse_matches_two_loop_reference():
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(13, 4))
    target = rng.normal(size=(13, 4))
    acc = 0.0
    for i in range(13):
        for j in range(4):
            acc += (pred[i, j] - target[i, j]) ** 2
    assert nn.mse_loss(pred, target) == pytest.approx(acc / (13 * 4), rel=1e-6)


def test_mse_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        nn.mse_loss(np.zeros((0, 4)), np.zeros((0, 4)))
    with pytest.raises(ValueError):
        nn.mse_loss(np.zeros((2, 4)), np.zeros((3, 4)))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_zero_error_batch_gives_zero_gradients():
    p = nn.init_params(tiny_config(), dtype=np.float64)
    x = np.random.default_rng(5).uniform(-1, 1, (8, 4))
    y = nn.forward(p, x)
    loss, grads = nn.loss_and_grads(p, x, y)
    assert loss == pytest.approx(0.0, abs=1e-28)
    for g in grads:
        np.testing.assert_allclose(g, 0.0, atol=1e-13)


def _gradcheck_problem():
    cfg = tiny_config(width=8, layers=3, seed=22)
    p = nn.init_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(1022)
    X = rng.uniform(-1, 1, (16, 4))
    Y = rng.uniform(-1, 1, (16, 4))
    return p, X, Y


def _min_kink_margin(p, X):
    cfg = p.config
    z = X @ p.weights[0] + p.biases[0]
    margins = [np.abs(z).min()]
    h = np.maximum(z, 0)
    block_in = h
    for i in range(cfg.hidden_layers):
        if i % cfg.skip_period == 0:
            block_in = h
        z = h @ p.weights[1 + i] + p.biases[1 + i]
        h = np.maximum(z, 0)
        if (i + 1) % cfg.skip_period == 0:
            h = h + block_in
        margins.append(np.abs(z).min())
    return min(margins)


def test_gradients_match_central_finite_differences():
    p, X, Y = _gradcheck_problem()
    # all pre-activations clear the kink by more than the probe step can move
    # them, so no coordinate needs excluding
    assert _min_kink_margin(p, X) > 2e-3
    _, grads = nn.loss_and_grads(p, X, Y)
    h = 1e-3
    worst = 0.0
    for k, arr in enumerate(p.arrays()):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + h
            lp, _ = nn.loss_and_grads(p, X, Y)
            arr[ix] = old - h
            lm, _ = nn.loss_and_grads(p, X, Y)
            arr[ix] = old
            fd = (lp - lm) / (2 * h)
            a = grads[k][ix]
            worst = max(worst, abs(a - fd) / (abs(a) + abs(fd) + 1e-8))
    assert worst < 1e-4


def test_duplicating_samples_leaves_gradients_unchanged():
    p, X, Y = _gradcheck_problem()
    _, g1 = nn.loss_and_grads(p, X, Y)
    _, g2 = nn.loss_and_grads(p, np.vstack([X, X]), np.vstack([Y, Y]))
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_backward_residual_path_carries_gradient():
    # with dead block weights the block is pure identity, so input-projection
    # gradients must still be nonzero through the skip
    cfg = tiny_config(layers=3)
    p = nn.init_params(cfg, dtype=np.float64)
    for i in range(1, 1 + cfg.hidden_layers):
        p.weights[i][:] = 0
        p.biases[i][:] = 0
    x = np.random.default_rng(2).uniform(0.1, 1, (8, 4))
    y = np.random.default_rng(3).uniform(-1, 1, (8, 4))
    grads = nn.backward(p, x, y)
    assert np.abs(grads[0]).max() > 0


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

def _scalar_problem(w0=1.0):
    cfg = nn.MlpConfig(input_dim=1, output_dim=1, hidden_width=1, hidden_layers=1,
                       skip_period=3, weight_init_seed=0)
    p = zeroed_params(cfg)
    p.weights[0][:] = w0
    return p


def test_adamw_first_step_hand_value():
    p = _scalar_problem(w0=1.0)
    state = nn.init_optimizer(p, base_lr=1e-3, weight_decay=1e-2)
    grads = [np.zeros_like(a) for a in p.arrays()]
    grads[0][:] = 0.5
    nn.adamw_step(state, p, grads, lr=1e-3)
    # 1 - 1e-3 * (0.5 / (0.5 + 1e-8)) - 1e-3 * 0.01 * 1.0
    assert p.weights[0][0, 0] == pytest.approx(0.99899, abs=1e-6)
    assert state.step == 1


def test_adamw_zero_grad_zero_decay_is_identity():
    p = _scalar_problem(w0=0.7)
    state = nn.init_optimizer(p, weight_decay=0.0)
    grads = [np.zeros_like(a) for a in p.arrays()]
    nn.adamw_step(state, p, grads, lr=1e-3)
    assert p.weights[0][0, 0] == 0.7


def test_adamw_pure_decay_shrinks():
    p = _scalar_problem(w0=0.7)
    state = nn.init_optimizer(p, weight_decay=1e-2)
    grads = [np.zeros_like(a) for a in p.arrays()]
    nn.adamw_step(state, p, grads, lr=1e-3)
    assert p.weights[0][0, 0] == pytest.approx(0.7 * (1 - 1e-3 * 1e-2), rel=1e-12)


def test_adamw_aborts_on_nonfinite_gradient():
    p = _scalar_problem()
    state = nn.init_optimizer(p)
    grads = [np.zeros_like(a) for a in p.arrays()]
    grads[0][:] = np.nan
    before = p.weights[0].copy()
    with pytest.raises(FloatingPointError, match="step 1"):
        nn.adamw_step(state, p, grads, lr=1e-3)
    np.testing.assert_array_equal(p.weights[0], before)
    assert state.step == 0


def test_lr_schedule_endpoints_and_midpoint():
    state = nn.init_optimizer(_scalar_problem(), base_lr=5e-4, final_lr=1e-5)
    assert nn.lr_at(state, 0, 3000) == pytest.approx(5e-4)
    assert nn.lr_at(state, 3000, 3000) == pytest.approx(1e-5)
    assert nn.lr_at(state, 1500, 3000) == pytest.approx(math.sqrt(5e-4 * 1e-5), rel=1e-12)
    with pytest.raises(ValueError):
        nn.lr_at(state, 0, 0)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_fit_normalization_symmetric_span():
    feats = np.array([[-6.0], [6.0], [0.0]])
    norm = nn.fit_normalization(feats)
    assert norm.offset[0] == 0.0
    assert norm.scale[0] == pytest.approx(1.0 / 6.0)


def test_fit_normalization_constant_feature():
    feats = np.full((5, 1), 3.25)
    norm = nn.fit_normalization(feats)
    assert norm.offset[0] == 3.25
    assert norm.scale[0] == 1.0
    np.testing.assert_array_equal(norm.normalize(feats), np.zeros((5, 1)))


def test_fit_normalization_maps_to_unit_interval():
    rng = np.random.default_rng(8)
    feats = rng.uniform(-50, 120, (200, 8))
    norm = nn.fit_normalization(feats)
    fn = norm.normalize(feats)
    assert fn.min() >= -1 - 1e-6 and fn.max() <= 1 + 1e-6
    assert fn.min() == pytest.approx(-1) and fn.max() == pytest.approx(1)


# ---------------------------------------------------------------------------
# init and checkpoints
# ---------------------------------------------------------------------------

def test_init_is_deterministic_and_seed_sensitive():
    a = nn.init_params(tiny_config(seed=1))
    b = nn.init_params(tiny_config(seed=1))
    c = nn.init_params(tiny_config(seed=2))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_init_kaiming_bound_and_zero_bias():
    cfg = tiny_config(width=64, layers=2)
    p = nn.init_params(cfg)
    for (fan_in, _), w, b in zip(nn.layer_dims(cfg), p.weights, p.biases):
        assert np.abs(w).max() <= np.sqrt(6.0 / fan_in)
        np.testing.assert_array_equal(b, 0)


def test_checkpoint_round_trip_and_reproducible_bytes(tmp_path):
    cfg = tiny_config(width=16, layers=4, seed=9)
    p = nn.init_params(cfg)
    p.input_norm = nn.Normalization(np.array([1.0, 2, 3, 4.0]), np.array([0.5, 0.25, 2.0, 1.0]))
    path = tmp_path / "w.bin"
    nn.save_checkpoint(p, path)
    q = nn.load_checkpoint(path)
    assert q.config == cfg
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(q.input_norm.offset, p.input_norm.offset)
    nn.save_checkpoint(q, tmp_path / "w2.bin")
    assert (tmp_path / "w.bin").read_bytes() == (tmp_path / "w2.bin").read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    p = nn.init_params(tiny_config())
    path = tmp_path / "w.bin"
    nn.save_checkpoint(p, path)
    blob = bytearray(path.read_bytes())

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(nn.CheckpointFormatError, match="magic"):
        nn.load_checkpoint(bad)

    bad.write_bytes(bytes(blob[:-3]))
    with pytest.raises(nn.CheckpointFormatError, match="truncated"):
        nn.load_checkpoint(bad)

    bad.write_bytes(bytes(blob) + b"\x00")
    with pytest.raises(nn.CheckpointFormatError, match="trailing"):
        nn.load_checkpoint(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        nn.MlpConfig(hidden_layers=0)
    with pytest.raises(ValueError):
        nn.MlpConfig(skip_period=0)
    with pytest.raises(ValueError):
        nn.MlpConfig(activation="tanh")

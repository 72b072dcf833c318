"""CNN engine tests: layer math, gradient checks, Adam, training, checkpoints."""

import numpy as np
import pytest

from quanvnet.errors import CacheError, ConfigError
from quanvnet.nn import (
    Adam,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2x2,
    Network,
    ReLU,
    cross_entropy_grad,
    evaluate,
    load_model,
    predict_proba,
    save_model,
    softmax_cross_entropy,
    train,
)
from quanvnet.rng import make_rng

from helpers import (
    analytic_gradients,
    draw_smooth_instance,
    fd_gradients,
    max_rel_error,
    tiny_network,
)


# ---------------------------------------------------------------------------
# conv
# ---------------------------------------------------------------------------

def test_conv_single_pixel_same_padding():
    # 1x1 input [x] with only the top-left kernel weight set: out = w*x + b
    conv = Conv2D(1, 1, make_rng(0, "t"))
    conv.w[...] = 0.0
    conv.w[0, 0, 0, 0] = 1.7
    conv.b[0] = 0.25
    x = np.full((1, 1, 1, 1), 3.0)
    out = conv.forward(x)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == pytest.approx(1.7 * 3.0 + 0.25)


def test_conv_identity_kernel():
    conv = Conv2D(1, 1, make_rng(1, "t"))
    conv.w[...] = 0.0
    conv.w[0, 0, 0, 0] = 1.0
    conv.b[...] = 0.0
    x = np.arange(25, dtype=np.float64).reshape(1, 5, 5, 1)
    assert np.allclose(conv.forward(x), x)


def test_conv_output_shape_and_param_count():
    conv = Conv2D(4, 16, make_rng(2, "t"))
    out = conv.forward(np.zeros((2, 14, 14, 4)))
    assert out.shape == (2, 14, 14, 16)
    assert sum(p.size for p in conv.params()) == 272


def test_conv_channel_mismatch():
    conv = Conv2D(3, 8, make_rng(3, "t"))
    with pytest.raises(ConfigError):
        conv.forward(np.zeros((1, 4, 4, 2)))


# ---------------------------------------------------------------------------
# relu / pool / dense / dropout
# ---------------------------------------------------------------------------

def test_relu_values():
    relu = ReLU()
    out = relu.forward(np.array([[-1.0, 0.0, 2.0]]))
    assert np.array_equal(out, [[0.0, 0.0, 2.0]])
    assert np.array_equal(relu.forward(np.full((2, 3), -5.0)), np.zeros((2, 3)))


def test_relu_gradient_gate():
    relu = ReLU()
    x = np.array([[-1.0, 0.5, 0.0, 2.0]])
    relu.forward(x)
    grad = relu.backward(np.ones_like(x))
    assert np.array_equal(grad, [[0.0, 1.0, 0.0, 1.0]])


def test_maxpool_single_window():
    pool = MaxPool2x2()
    out = pool.forward(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    assert out.reshape(()) == pytest.approx(4.0)


def test_maxpool_floor_semantics():
    pool = MaxPool2x2()
    assert pool.forward(np.zeros((1, 7, 7, 3))).shape == (1, 3, 3, 3)
    assert pool.forward(np.zeros((1, 14, 14, 16))).shape == (1, 7, 7, 16)
    with pytest.raises(ConfigError):
        pool.forward(np.zeros((1, 1, 4, 1)))


def test_maxpool_backward_routes_to_argmax():
    pool = MaxPool2x2()
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    pool.forward(x)
    dx = pool.backward(np.array([[[[5.0]]]]))
    expected = np.zeros((1, 2, 2, 1))
    expected[0, 1, 1, 0] = 5.0
    assert np.array_equal(dx, expected)


def test_dense_parameter_counts():
    assert sum(p.size for p in Dense(288, 300, make_rng(0, "d")).params()) == 86700
    assert sum(p.size for p in Dense(300, 100, make_rng(0, "d")).params()) == 30100
    assert sum(p.size for p in Dense(100, 2, make_rng(0, "d")).params()) == 202


def test_dropout_eval_identity():
    drop = Dropout(0.2)
    x = np.arange(12, dtype=np.float64).reshape(3, 4)
    assert np.array_equal(drop.forward(x, train=False), x)
    assert np.array_equal(Dropout(0.0).forward(x, train=True, rng=make_rng(0)), x)


def test_dropout_survivor_fraction():
    drop = Dropout(0.2)
    x = np.ones((1, 900))
    out = drop.forward(x, train=True, rng=make_rng(123, "drop"))
    fraction = np.count_nonzero(out) / x.size
    assert abs(fraction - 0.8) <= 0.04
    # survivors are rescaled by 1/(1-rate)
    assert np.allclose(out[out != 0], 1.25)


def test_dropout_bad_rate():
    with pytest.raises(ConfigError):
        Dropout(1.0)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_softmax_ce_symmetric_logits():
    loss, probs = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(np.log(2))
    assert np.allclose(probs, [[0.5, 0.5]])


def test_softmax_shift_invariance():
    logits = np.array([[1.0, -2.0, 0.3], [0.0, 4.0, 1.0]])
    _, p1 = softmax_cross_entropy(logits, np.array([0, 1]))
    _, p2 = softmax_cross_entropy(logits + 123.4, np.array([0, 1]))
    assert np.allclose(p1, p2, atol=1e-12)


def test_softmax_ce_gradient_matches_probs_minus_onehot():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 4))
    labels = np.array([0, 3, 1])
    h = 1e-6
    _, probs = softmax_cross_entropy(logits, labels)
    analytic = cross_entropy_grad(probs, labels)
    numeric = np.zeros_like(logits)
    for i in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            up, down = logits.copy(), logits.copy()
            up[i, j] += h
            down[i, j] -= h
            lp, _ = softmax_cross_entropy(up, labels)
            lm, _ = softmax_cross_entropy(down, labels)
            numeric[i, j] = (lp - lm) / (2 * h)
    assert np.max(np.abs(analytic - numeric)) < 1e-8


def test_zero_loss_limit_has_zero_gradient():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    grad = cross_entropy_grad(probs, np.array([0, 1]))
    assert np.max(np.abs(grad)) == 0.0


# ---------------------------------------------------------------------------
# architecture audit
# ---------------------------------------------------------------------------

def test_default_model_parameter_counts():
    model = Network(n_classes=2, seed=0)
    assert model.layer_parameter_counts() == [272, 1040, 2080, 86700, 30100, 202]
    assert model.parameter_count() == 120394


def test_three_class_model_swaps_output_layer():
    model = Network(n_classes=3, seed=0)
    assert model.layer_parameter_counts() == [272, 1040, 2080, 86700, 30100, 303]


def test_shape_chain():
    model = Network(n_classes=2, seed=1)
    x = np.random.default_rng(0).uniform(size=(2, 14, 14, 4))
    expected = [
        (2, 14, 14, 16), (2, 14, 14, 16), (2, 7, 7, 16),
        (2, 7, 7, 16), (2, 7, 7, 16),
        (2, 7, 7, 32), (2, 7, 7, 32), (2, 3, 3, 32),
        (2, 288), (2, 300), (2, 300), (2, 300),
        (2, 100), (2, 100), (2, 100), (2, 2),
    ]
    for layer, shape in zip(model.layers, expected):
        x = layer.forward(x)
        assert x.shape == shape


def test_forward_rejects_wrong_input_shape():
    model = Network(n_classes=2, seed=0)
    with pytest.raises(ConfigError):
        model.forward(np.zeros((1, 14, 14, 3)))


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

def test_gradients_match_finite_differences():
    h = 1e-3
    rng = np.random.default_rng(31)
    for _ in range(3):
        model, x, y = draw_smooth_instance(rng, h)
        analytic = analytic_gradients(model, x, y)
        numeric = fd_gradients(model, x, y, h=h)
        assert max_rel_error(analytic, numeric) < 1e-4


def test_duplicated_batch_keeps_mean_gradients():
    model = tiny_network(7)
    rng = np.random.default_rng(8)
    x = rng.uniform(-1.0, 1.0, size=(4, 6, 6, 1))
    y = rng.integers(0, 2, size=4)
    single = analytic_gradients(model, x, y)
    doubled = analytic_gradients(model, np.concatenate([x, x]), np.concatenate([y, y]))
    for a, b in zip(single, doubled):
        assert np.allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0, 3.0])
    opt = Adam([p], lr=0.01)
    opt.step([np.zeros(3)])
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_adam_first_step_magnitude():
    p = np.array([0.0, 0.0])
    g = np.array([0.3, -4.0])
    opt = Adam([p], lr=1e-4)
    opt.step([g])
    # bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g)
    assert np.allclose(p, [-1e-4, 1e-4], rtol=1e-6)


def test_adam_descends_quadratic_monotonically():
    w = np.array([1.0])
    opt = Adam([w], lr=0.01)
    trajectory = [w[0]]
    for _ in range(50):
        opt.step([2.0 * w])
        trajectory.append(w[0])
    diffs = np.diff(trajectory)
    assert np.all(diffs < 0)
    assert 0.0 < trajectory[-1] < 0.6


def test_adam_shape_mismatch():
    opt = Adam([np.zeros(3)])
    with pytest.raises(ConfigError):
        opt.step([np.zeros(4)])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _separable_blobs(n_per_class, seed):
    """Two-class 14x14x4 features: opposite-sign halves, trivially separable."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label in (0, 1):
        base = np.full((n_per_class, 14, 14, 4), -0.8 if label else 0.8)
        base += rng.normal(scale=0.05, size=base.shape)
        xs.append(np.clip(base, -1.0, 1.0))
        ys.append(np.full(n_per_class, label))
    return np.concatenate(xs), np.concatenate(ys)


def test_train_reaches_full_accuracy_on_separable_blobs():
    x, y = _separable_blobs(64, 5)
    model = Network(n_classes=2, seed=3)
    log = train(model, x, y, epochs=20, seed=11)
    assert log[-1].train_acc == 1.0
    _, acc = evaluate(model, x, y)
    assert acc == 1.0


def test_train_zero_epochs_keeps_initialization():
    x, y = _separable_blobs(4, 1)
    model = Network(n_classes=2, seed=9)
    reference = Network(n_classes=2, seed=9)
    log = train(model, x, y, epochs=0, seed=0)
    assert log == []
    for a, b in zip(model.parameters(), reference.parameters()):
        assert np.array_equal(a, b)


def test_train_same_seed_identical_logs():
    x, y = _separable_blobs(8, 2)
    log1 = train(Network(n_classes=2, seed=4), x, y, epochs=3, seed=21, test_x=x, test_y=y)
    log2 = train(Network(n_classes=2, seed=4), x, y, epochs=3, seed=21, test_x=x, test_y=y)
    assert log1 == log2


def test_train_rejects_bad_inputs():
    model = Network(n_classes=2, seed=0)
    with pytest.raises(ConfigError):
        train(model, np.zeros((0, 14, 14, 4)), np.zeros(0, dtype=int))
    with pytest.raises(ConfigError):
        train(model, np.zeros((2, 7, 7, 4)), np.array([0, 1]))
    with pytest.raises(ConfigError):
        train(model, np.zeros((2, 14, 14, 4)), np.array([0, 2]))


# ---------------------------------------------------------------------------
# prediction + checkpoints
# ---------------------------------------------------------------------------

def test_predict_proba_rows_sum_to_one():
    model = Network(n_classes=3, seed=2)
    probs = predict_proba(model, np.random.default_rng(1).uniform(size=(5, 14, 14, 4)))
    assert probs.shape == (5, 3)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_predict_proba_duplicated_input_identical_rows():
    model = Network(n_classes=2, seed=2)
    img = np.random.default_rng(3).uniform(size=(14, 14, 4))
    probs = predict_proba(model, np.stack([img, img]))
    assert np.array_equal(probs[0], probs[1])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    x, y = _separable_blobs(8, 3)
    model = Network(n_classes=2, seed=6)
    train(model, x, y, epochs=1, seed=1)
    path = tmp_path / "model.qvm"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.n_classes == 2
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    assert np.array_equal(predict_proba(model, x[:3]), predict_proba(loaded, x[:3]))


def test_checkpoint_rejects_corruption(tmp_path):
    model = tiny_network(1)
    path = tmp_path / "m.qvm"
    save_model(model, path)
    raw = path.read_bytes()
    (tmp_path / "bad_magic.qvm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CacheError):
        load_model(tmp_path / "bad_magic.qvm")
    (tmp_path / "truncated.qvm").write_bytes(raw[:-10])
    with pytest.raises(CacheError):
        load_model(tmp_path / "truncated.qvm")

import math

import numpy as np
import pytest

import oracles
from viapkit import nn


def zero_params(hw=8, channels=3, classes=4):
    feat = (hw // 4) * (hw // 4) * nn.CONV2_CHANNELS
    return nn.ModelParams(
        hw, hw, channels, classes,
        conv1_w=np.zeros((3, 3, channels, nn.CONV1_CHANNELS)),
        conv1_b=np.zeros(nn.CONV1_CHANNELS),
        conv2_w=np.zeros((3, 3, nn.CONV1_CHANNELS, nn.CONV2_CHANNELS)),
        conv2_b=np.zeros(nn.CONV2_CHANNELS),
        dense_w=np.zeros((feat, classes)),
        dense_b=np.zeros(classes),
    )


def rand_params(rng, hw=8, channels=3, classes=4, scale=0.5):
    feat = (hw // 4) * (hw // 4) * nn.CONV2_CHANNELS
    u = lambda *s: rng.uniform(-scale, scale, size=s)
    return nn.ModelParams(
        hw, hw, channels, classes,
        conv1_w=u(3, 3, channels, nn.CONV1_CHANNELS),
        conv1_b=u(nn.CONV1_CHANNELS),
        conv2_w=u(3, 3, nn.CONV1_CHANNELS, nn.CONV2_CHANNELS),
        conv2_b=u(nn.CONV2_CHANNELS),
        dense_w=u(feat, classes),
        dense_b=u(classes),
    )


# --- forward ---------------------------------------------------------------

def test_zero_weights_give_uniform_softmax(rng):
    params = zero_params(classes=4)
    x = rng.uniform(0, 1, size=(3, 8, 8, 3))
    logits = nn.forward(params, x)
    assert np.array_equal(logits, np.zeros((3, 4)))
    assert np.array_equal(nn.softmax(logits), np.full((3, 4), 0.25))


def test_dense_hand_example():
    out = nn.dense(np.array([[0.5]]), np.array([[2.0, -1.0]]), np.zeros(2))
    assert np.array_equal(out, np.array([[1.0, -0.5]]))


def test_identical_rows_in_identical_out(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(1, 8, 8, 3))
    logits = nn.forward(params, np.repeat(x, 4, axis=0))
    for row in logits[1:]:
        assert np.array_equal(row, logits[0])


def test_forward_is_deterministic(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    assert np.array_equal(nn.forward(params, x), nn.forward(params, x))


def test_forward_rejects_bad_shapes(rng):
    params = rand_params(rng)
    with pytest.raises(ValueError):
        nn.forward(params, np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        nn.forward(params, np.zeros((1, 8, 8, 4)))
    bad = np.zeros((1, 8, 8, 3))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        nn.forward(params, bad)


def test_softmax_rows_normalized(rng):
    logits = rng.normal(0, 50, size=(32, 5))
    logits[0] = [1000.0, -1000.0, 0.0, 0.0, 0.0]
    p = nn.softmax(logits)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12


# --- loss ------------------------------------------------------------------

def test_uniform_logits_loss_is_ln_k():
    loss, probs = nn.softmax_cross_entropy(np.zeros((5, 2)), np.array([0, 1, 0, 1, 1]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-15)
    loss4, _ = nn.softmax_cross_entropy(np.zeros((2, 4)), np.array([3, 0]))
    assert loss4 == pytest.approx(math.log(4.0), abs=1e-15)


def test_batch_loss_is_mean_of_singletons(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(6, 8, 8, 3))
    labels = rng.integers(0, 4, size=6)
    whole, _ = nn.loss_and_input_grad(params, x, labels)
    singles = [
        nn.loss_and_input_grad(params, x[i : i + 1], labels[i : i + 1])[0]
        for i in range(6)
    ]
    assert whole == pytest.approx(np.mean(singles), abs=1e-12)


def test_duplicated_image_halves_grad(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(1, 8, 8, 3))
    labels = np.array([2])
    _, g1 = nn.loss_and_input_grad(params, x, labels)
    _, g2 = nn.loss_and_input_grad(params, np.repeat(x, 2, axis=0), np.array([2, 2]))
    assert np.max(np.abs(g2[0] - g1[0] / 2)) < 1e-12
    assert np.max(np.abs(g2[1] - g1[0] / 2)) < 1e-12


def test_label_out_of_range_rejected(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    with pytest.raises(ValueError):
        nn.loss_and_input_grad(params, x, np.array([0, 4]))
    with pytest.raises(ValueError):
        nn.loss_and_input_grad(params, x, np.array([-1, 0]))


def test_grads_are_shape_congruent(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    _, grads = nn.loss_and_param_grad(params, x, np.array([0, 1]))
    for f in nn.PARAM_FIELDS:
        assert getattr(grads, f).shape == getattr(params, f).shape


def test_near_perfect_logits_have_tiny_grads():
    params = zero_params(classes=3)
    logits = np.array([[40.0, 0.0, 0.0]])
    _, probs = nn.softmax_cross_entropy(logits, np.array([0]))
    dlogits = probs - np.array([[1.0, 0.0, 0.0]])
    assert np.max(np.abs(dlogits)) < 1e-12


# --- gradients vs finite differences ---------------------------------------

def test_input_grad_matches_fd():
    for seed in range(3):
        params, x, labels = oracles.safe_config(seed)
        _, grad = nn.loss_and_input_grad(params, x, labels)
        coords = [tuple(idx) for idx in np.ndindex(x.shape)][::7]
        fd = oracles.fd_input_grad(params, x, labels, coords)
        for k, idx in enumerate(coords):
            assert oracles.rel_err(grad[idx], fd[k]) < 1e-6


def test_param_grad_matches_fd():
    params, x, labels = oracles.safe_config(11)
    _, grads = nn.loss_and_param_grad(params, x, labels)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5)))
    for f in nn.PARAM_FIELDS:
        tensor = getattr(params, f)
        all_coords = list(np.ndindex(tensor.shape))
        pick = rng.choice(len(all_coords), size=min(20, len(all_coords)), replace=False)
        coords = [all_coords[i] for i in pick]
        fd = oracles.fd_param_grad(params, x, labels, f, coords)
        for k, idx in enumerate(coords):
            assert oracles.rel_err(getattr(grads, f)[idx], fd[k]) < 1e-6, f


def test_backward_requires_matching_dlogits(rng):
    params = rand_params(rng)
    g = nn.forward_graph(params, rng.uniform(0, 1, size=(2, 8, 8, 3)))
    with pytest.raises(ValueError):
        g.backward(np.zeros((3, 4)))


def test_grad_determinism(rng):
    params = rand_params(rng)
    x = rng.uniform(0, 1, size=(2, 8, 8, 3))
    labels = np.array([1, 3])
    l1, g1 = nn.loss_and_input_grad(params, x, labels)
    l2, g2 = nn.loss_and_input_grad(params, x, labels)
    assert l1 == l2 and np.array_equal(g1, g2)


# --- serialization ----------------------------------------------------------

def test_params_roundtrip_bit_exact(rng, tmp_path):
    params = rand_params(rng, hw=8, channels=2, classes=3)
    path = tmp_path / "w.viapnet"
    nn.save_params(params, path)
    back = nn.load_params(path)
    assert (back.height, back.width, back.channels, back.classes) == (8, 8, 2, 3)
    for f in nn.PARAM_FIELDS:
        assert np.array_equal(getattr(back, f), getattr(params, f))
    # same bytes when written again
    path2 = tmp_path / "w2.viapnet"
    nn.save_params(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.viapnet"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ValueError):
        nn.load_params(path)


def test_model_params_validates_shapes():
    with pytest.raises(ValueError):
        zp = zero_params()
        nn.ModelParams(
            8, 8, 3, 4,
            conv1_w=np.zeros((3, 3, 3, nn.CONV1_CHANNELS + 1)),
            conv1_b=zp.conv1_b, conv2_w=zp.conv2_w, conv2_b=zp.conv2_b,
            dense_w=zp.dense_w, dense_b=zp.dense_b,
        )


def test_model_params_immutable(rng):
    params = rand_params(rng)
    with pytest.raises((ValueError, RuntimeError)):
        params.conv1_w[0, 0, 0, 0] = 1.0

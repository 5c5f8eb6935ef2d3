import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcmcl.features import FeatureNorm
from pcmcl.model import (Architecture, ModelParams, TrainedModel, avg_pool, avg_pool_backward, backward,
                         batch_losses, bce_with_logits, conv2d, cross_entropy, forward, init_params, load_checkpoint,
                         load_model, loss_aux, loss_main, loss_total, save_checkpoint, save_model, sigmoid)

TINY = Architecture(n_bands=16, input_pool=(2, 2), kernel=3, channels=3, embed_dim=4)


def tiny_batch(seed=0, bsz=3, frames=20, n_main=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((bsz, 16, frames))
    y_main = rng.integers(0, 2, size=(bsz, n_main)).astype(float)
    y_aux = rng.integers(0, 2, size=bsz)
    return x, y_main, y_aux


def naive_bce(logits, targets):
    p = 1 / (1 + np.exp(-np.asarray(logits)))
    t = np.asarray(targets)
    return -(t * np.log(p) + (1 - t) * np.log(1 - p))


def naive_ce(logits, y):
    e = np.exp(np.asarray(logits))
    return -np.log(e[np.arange(len(y)), y] / e.sum(axis=1))


moderate = arrays(np.float64, (4, 3), elements=st.floats(-10, 10))


@given(moderate, arrays(np.int64, (4, 3), elements=st.integers(0, 1)))
def test_bce_matches_naive(logits, targets):
    assert loss_main(logits, targets) == pytest.approx(naive_bce(logits, targets).mean(), abs=1e-12)


@given(arrays(np.float64, (5, 2), elements=st.floats(-10, 10)), arrays(np.int64, 5, elements=st.integers(0, 1)))
def test_ce_matches_naive(logits, y):
    assert loss_aux(logits, y) == pytest.approx(naive_ce(logits, y).mean(), abs=1e-12)


def test_zero_logits_give_ln2():
    assert loss_main(np.zeros((2, 3)), [[1, 0, 1], [0, 0, 1]]) == pytest.approx(math.log(2), abs=1e-15)
    assert loss_aux(np.zeros((3, 2)), [0, 1, 1]) == pytest.approx(math.log(2), abs=1e-15)


def test_losses_are_stable_at_extreme_logits():
    assert np.all(np.isfinite(bce_with_logits([1e4, -1e4], [0, 1])))
    assert bce_with_logits([1e4], [0])[0] == pytest.approx(1e4)
    assert np.isfinite(cross_entropy([[1e4, -1e4]], [1])).all()
    assert sigmoid(-1e4) == 0.0 and sigmoid(1e4) == 1.0


def test_loss_shape_and_alpha_checks():
    with pytest.raises(ValueError):
        loss_main(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        loss_total(1.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 2)), [2])
    assert loss_total(0.5, 2.0, 0.1) == pytest.approx(0.7)


def test_avg_pool_and_adjoint():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 9, 10))
    y = avg_pool(x, 2, 3)
    assert y.shape == (2, 3, 4, 3)
    assert y[1, 2, 3, 2] == pytest.approx(x[1, 2, 6:8, 6:9].mean())
    # <pool(x), g> == <x, pool^T(g)>
    g = rng.standard_normal(y.shape)
    assert np.sum(y * g) == pytest.approx(np.sum(x * avg_pool_backward(g, x.shape, 2, 3)))


def test_conv_matches_loops():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2, 6, 7))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out, _ = conv2d(x, w, b)
    ref = np.zeros((2, 3, 4, 5))
    for n in range(2):
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    ref[n, o, i, j] = np.sum(x[n, :, i:i + 3, j:j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_forward_shapes():
    params = init_params(TINY, 0)
    x, _, _ = tiny_batch()
    out = forward(params, x)
    assert out.z.shape == (3, 4) and out.main_logits.shape == (3, 3) and out.aux_logits.shape == (3, 2)
    single = forward(params, x[0])
    np.testing.assert_allclose(single.main_logits, out.main_logits[0])
    with pytest.raises(ValueError):
        forward(params, np.zeros((3, 15, 20)))


def finite_difference_check(alpha, seed, n_samples=60):
    params = init_params(TINY, seed)
    x, y_main, y_aux = tiny_batch(seed)
    _, grads = backward(params, x, y_main, y_aux, alpha)
    rng = np.random.default_rng(seed + 100)
    names = sorted(params.tensors)
    h = 1e-5
    worst = 0.0
    for _ in range(n_samples):
        name = names[rng.integers(len(names))]
        t = params.tensors[name]
        idx = tuple(rng.integers(s) for s in t.shape)
        orig = t[idx]
        t[idx] = orig + h
        up = batch_losses(params, x, y_main, y_aux, alpha).total
        t[idx] = orig - h
        down = batch_losses(params, x, y_main, y_aux, alpha).total
        t[idx] = orig
        fd = (up - down) / (2 * h)
        g = grads[name][idx]
        denom = max(abs(fd), abs(g), 1e-8)
        worst = max(worst, abs(fd - g) / denom)
    return worst


@pytest.mark.parametrize("alpha, seed", [(0.1, 0), (1.0, 1), (0.0, 2)])
def test_backward_matches_finite_differences(alpha, seed):
    assert finite_difference_check(alpha, seed) < 1e-4


def test_alpha_zero_zeroes_aux_gradients():
    params = init_params(TINY, 3)
    x, y_main, y_aux = tiny_batch(3)
    losses, grads = backward(params, x, y_main, y_aux, 0.0)
    assert np.all(grads["aux.weight"] == 0) and np.all(grads["aux.bias"] == 0)
    assert losses.total == losses.main
    # the encoder gradient is then the main-task gradient alone
    _, grads_y1 = backward(params, x, y_main, 1 - y_aux, 0.0)
    np.testing.assert_array_equal(grads["conv1.weight"], grads_y1["conv1.weight"])


def test_init_is_seeded_and_aux_init_is_independent():
    a, b = init_params(TINY, 5), init_params(TINY, 5)
    for k in a.tensors:
        np.testing.assert_array_equal(a[k], b[k])
    z = init_params(TINY, 5, aux_init="zeros")
    np.testing.assert_array_equal(z["conv1.weight"], a["conv1.weight"])
    np.testing.assert_array_equal(z["main.weight"], a["main.weight"])
    assert not z["aux.weight"].any()


def test_params_validate_shapes():
    t = dict(init_params(TINY, 0).tensors)
    t["main.bias"] = np.zeros(5)
    with pytest.raises(ValueError):
        ModelParams(TINY, t)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_checkpoint_roundtrip(tmp_path_factory, seed):
    params = init_params(TINY, seed)
    path = tmp_path_factory.mktemp("ck") / "m.ckpt"
    save_checkpoint(path, params.tensors, {"seed": seed})
    tensors, meta = load_checkpoint(path)
    assert meta == {"seed": seed}
    for k, v in params.tensors.items():
        np.testing.assert_array_equal(tensors[k], v)


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.ones(3)}, {})
    data = path.read_bytes()
    path.write_bytes(b"X" + data[1:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(data + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(path)


def test_model_roundtrip(tmp_path):
    params = init_params(TINY, 0)
    norm = FeatureNorm(np.arange(16.0), np.ones(16))
    save_model(tmp_path / "m.ckpt", TrainedModel(params, norm, "two", 3200), {"note": 1})
    model, extra = load_model(tmp_path / "m.ckpt")
    assert extra == {"note": 1} and model.label_mode == "two" and model.target_len == 3200
    assert model.params.arch == TINY
    np.testing.assert_array_equal(model.norm.mean, norm.mean)

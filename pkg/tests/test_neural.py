import json

import numpy as np
import pytest

from autotrig import neural as nn


def test_special_token_ids():
    assert (nn.PAD, nn.UNK, nn.MASK_ENT, nn.MASK_TRG) == (0, 1, 2, 3)


# --- autodiff basics ---------------------------------------------------------


def test_quadratic_grad_exact():
    store = nn.ParamStore(0)
    store.add("w", (3, 4))

    def loss():
        return nn.tsum(nn.mul(store["w"], store["w"]))

    err = nn.grad_check(loss, store, eps=1e-5)
    assert err < 1e-8
    # analytic gradient is exactly 2w
    store.zero_grad()
    loss().backward()
    assert np.allclose(store["w"].grad, 2 * store["w"].data, atol=1e-12)


def test_grad_check_rejects_nan_loss():
    store = nn.ParamStore(0)
    store.add("w", (2,))

    def loss():
        return nn.Tensor(np.array(float("nan")))

    with pytest.raises(nn.NeuralError):
        nn.grad_check(loss, store)


def test_backward_requires_scalar():
    t = nn.Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(nn.NeuralError):
        t.backward()


def test_broadcast_add_backward():
    store = nn.ParamStore(1)
    store.add("m", (3, 4))
    store.add("b", (1, 4))

    def loss():
        return nn.tsum(nn.mul(nn.add(store["m"], store["b"]), nn.add(store["m"], store["b"])))

    assert nn.grad_check(loss, store, eps=1e-5) < 1e-7


def test_logsumexp_matches_numpy():
    x = np.random.default_rng(0).normal(size=(4, 5))
    t = nn.logsumexp(nn.constant(x), axis=1)
    ref = np.log(np.exp(x).sum(axis=1))
    assert np.allclose(t.data, ref, atol=1e-12)


def test_logsumexp_handles_minus_inf():
    x = np.array([[0.0, -np.inf], [-np.inf, -np.inf]])
    t = nn.logsumexp(nn.constant(x), axis=1)
    assert t.data[0] == pytest.approx(0.0)
    assert t.data[1] == -np.inf


def test_cross_entropy_uniform():
    logits = nn.constant(np.zeros((3, 7)))
    ce = nn.cross_entropy(logits, [0, 3, 6])
    assert float(ce.data) == pytest.approx(np.log(7))


# --- encoder -----------------------------------------------------------------


@pytest.fixture
def small_encoder():
    cfg = nn.EncoderConfig(vocab_size=30, embed_dim=6, hidden_dim=5)
    store = nn.ParamStore(42)
    nn.init_encoder(store, cfg)
    return store, cfg


def test_encode_shapes_and_purity(small_encoder):
    store, cfg = small_encoder
    out1 = nn.encode(store, cfg, [0, 0, 0])
    assert out1.shape == (3, 10)
    out2 = nn.encode(store, cfg, [0, 0, 0])
    assert np.array_equal(out1, out2)


def test_encode_rejects_out_of_range(small_encoder):
    store, cfg = small_encoder
    with pytest.raises(nn.NeuralError):
        nn.encode(store, cfg, [0, 99])


def test_encode_tensor_matches_numpy_path(small_encoder):
    store, cfg = small_encoder
    ids = [4, 9, 2, 7, 1]
    np_h = nn.encode(store, cfg, ids)
    t_h = nn.encode_tensor(store, cfg, ids)
    assert np.allclose(np_h, t_h.data, atol=1e-12)


def test_embedding_perturbation_locality(small_encoder):
    # the forward direction reacts only at/after the token's position,
    # the backward direction only at/before it
    store, cfg = small_encoder
    ids = [5, 6, 7, 8]
    x = store["embed"].data[ids]
    fwd = nn.lstm_forward(store, "enc.fwd", x)
    bwd = nn.lstm_forward(store, "enc.bwd", x, reverse=True)

    x2 = x.copy()
    x2[2] += 0.25  # perturb position 2's input vector
    fwd2 = nn.lstm_forward(store, "enc.fwd", x2)
    bwd2 = nn.lstm_forward(store, "enc.bwd", x2, reverse=True)

    assert np.allclose(fwd[:2], fwd2[:2], atol=1e-12)
    assert not np.allclose(fwd[2:], fwd2[2:])
    assert np.allclose(bwd[3:], bwd2[3:], atol=1e-12)
    assert not np.allclose(bwd[:3], bwd2[:3])


def test_encoder_grad_check(small_encoder):
    store, cfg = small_encoder
    ids = [3, 1, 4, 1, 5]

    def loss():
        h = nn.encode_tensor(store, cfg, ids)
        return nn.tsum(nn.mul(h, h))

    assert nn.grad_check(loss, store, eps=1e-5, max_coords=120, seed=1) < 1e-6


# --- optimizer ---------------------------------------------------------------


def test_sgd_zero_lr_no_change():
    store = nn.ParamStore(0)
    store.add("w", (4,))
    before = store["w"].data.copy()
    nn.sgd_step(store, {"w": np.ones(4)}, lr=0.0)
    assert np.array_equal(store["w"].data, before)


def test_sgd_arithmetic():
    store = nn.ParamStore(0)
    store.add("w", (1,), init="zeros")
    store["w"].data[:] = 1.0
    nn.sgd_step(store, {"w": np.array([0.5])}, lr=0.01)
    assert store["w"].data[0] == pytest.approx(0.995)


def test_sgd_clipping_scales():
    store = nn.ParamStore(0)
    store.add("w", (100,), init="zeros")
    g = np.ones(100) * 5.0  # norm 50
    nn.sgd_step(store, {"w": g}, lr=1.0, clip=5.0)
    # effective gradient scaled by 0.1
    assert np.allclose(store["w"].data, -0.5)


def test_sgd_shape_mismatch():
    store = nn.ParamStore(0)
    store.add("w", (4,))
    with pytest.raises(nn.NeuralError):
        nn.sgd_step(store, {"w": np.ones(5)}, lr=0.1)


def test_params_finite_after_updates():
    store = nn.ParamStore(3)
    store.add("w", (10, 10))
    rng = np.random.default_rng(0)
    for _ in range(20):
        nn.sgd_step(store, {"w": rng.normal(size=(10, 10))}, lr=0.1)
    assert store.all_finite()


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, small_encoder):
    store, cfg = small_encoder
    path = tmp_path / "model.ckpt.json"
    nn.save_checkpoint(path, "classifier", store, {"note": "x"})
    kind, loaded, meta = nn.load_checkpoint(path)
    assert kind == "classifier"
    assert meta == {"note": "x"}
    for name in store.names():
        assert np.array_equal(loaded[name].data, store[name].data)


def test_checkpoint_format_tag(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "other", "params": {}}))
    with pytest.raises(nn.NeuralError):
        nn.load_checkpoint(path)


def test_checkpoint_bytes_deterministic(tmp_path, small_encoder):
    store, _ = small_encoder
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    nn.save_checkpoint(p1, "m", store, {"h": [1.0]})
    nn.save_checkpoint(p2, "m", store, {"h": [1.0]})
    assert p1.read_bytes() == p2.read_bytes()


# --- vocab -------------------------------------------------------------------


def test_vocab_specials_and_unk():
    v = nn.Vocab(["zebra", "apple"])
    assert v.itos[:4] == nn.SPECIALS
    assert v.encode(["apple", "missing"]) == [4, nn.UNK]
    assert nn.Vocab.from_list(v.to_list()).itos == v.itos

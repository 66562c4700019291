import numpy as np
import pytest

from ppgmorph.autodiff.gradcheck import gradcheck
from ppgmorph.autodiff.tensor import Tensor, no_grad
from ppgmorph.model import (EncoderConfig, ModelConfigError, MoEHead, build_model, embed_numpy, encode,
                            load_model, moe_predict, project, save_model)


def test_default_shapes_batch_32():
    model = build_model(EncoderConfig(dropout=0.0), "S", 0).eval()
    x = Tensor(np.random.default_rng(0).normal(size=(32, 1, 1250)).astype(np.float32))
    enc = model.encoder
    with no_grad():
        stem = enc.stem_relu(enc.stem_bn(enc.stem_conv(x)))
        assert stem.shape == (32, 32, 1250)
        assert enc.features(x).shape == (32, 512, 3)
        h = encode(model, x)
        assert h.shape == (32, 512)
        assert project(model, h).shape == (32, 512)
        assert moe_predict(model.ipa_head, h).shape == (32,)


def test_length_ladder_and_sizes():
    cfg = EncoderConfig()
    assert cfg.lengths() == [1250, 625, 625, 313, 313, 157, 157, 79, 79, 40, 40, 20, 20, 10, 10, 5, 5, 3]
    assert cfg.final_channels == 512
    small = build_model(cfg, "S").n_parameters()
    wide = build_model(EncoderConfig(base_filters=64), "P").n_parameters()
    assert wide > small > 6_000_000


def test_input_validation(tiny_encoder):
    model = build_model(tiny_encoder)
    with pytest.raises(ModelConfigError):
        encode(model, np.zeros((2, 1, 65)))
    with pytest.raises(ModelConfigError):
        build_model(EncoderConfig(input_len=4))
    with pytest.raises(ModelConfigError):
        EncoderConfig(dropout=1.0)
    with pytest.raises(ModelConfigError):
        build_model(tiny_encoder, "Q")


def _head(d=4, n=3, seed=0):
    head = MoEHead(d, 5, n, np.random.default_rng(seed))
    return head.to_dtype(np.float64)


def test_moe_identical_experts_equal_single():
    head = _head()
    a1, a2 = head.experts[0]
    for b1, b2 in head.experts[1:]:
        b1.weight.data[...] = a1.weight.data
        b1.bias.data[...] = a1.bias.data
        b2.weight.data[...] = a2.weight.data
        b2.bias.data[...] = a2.bias.data
    h = Tensor(np.random.default_rng(1).normal(size=(7, 4)), dtype=np.float64)
    single = a2(a1(h).relu()).data.ravel()
    np.testing.assert_allclose(head(h).data, single, atol=1e-12)


def test_moe_forced_gate_selects_expert_one():
    head = _head()
    head.gate.weight.data[...] = 0
    head.gate.bias.data[...] = [1e3, -1e3, -1e3]
    h = Tensor(np.random.default_rng(2).normal(size=(5, 4)), dtype=np.float64)
    np.testing.assert_array_equal(head(h).data, head.expert_outputs(h).data[:, 0])


def test_moe_gradcheck():
    head = _head()
    h = Tensor(np.random.default_rng(3).normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    assert gradcheck(lambda h, *_: (head(h) ** 2).sum(), [h, *head.parameters()]) < 1e-4


def test_p_mode_has_no_heads(tiny_encoder):
    m = build_model(tiny_encoder, "P")
    assert m.ipa_head is None and m.sqi_head is None
    assert not any(n.startswith(("ipa_head", "sqi_head")) for n, _ in m.named_parameters())


def test_save_load_roundtrip(tmp_path, tiny_encoder):
    m = build_model(tiny_encoder, "S", seed=4)
    x = np.random.default_rng(0).normal(size=(6, 64))
    m.train()
    encode(m, x)  # moves BN running stats away from their init
    save_model(tmp_path / "m.ppgc", m, {"note": "x"})
    back, cfg, _ = load_model(tmp_path / "m.ppgc")
    assert cfg["note"] == "x" and cfg["mode"] == "S"
    # BN running stats are stored as f32, so the reload matches to f32 precision
    np.testing.assert_allclose(embed_numpy(back, x), embed_numpy(m, x), rtol=1e-5, atol=1e-6)
    save_model(tmp_path / "m2.ppgc", back)
    again, _, _ = load_model(tmp_path / "m2.ppgc")
    assert embed_numpy(again, x).tobytes() == embed_numpy(back, x).tobytes()


def test_load_rejects_mismatched_weights(tmp_path, tiny_encoder):
    from ppgmorph.autodiff.checkpoint import load_checkpoint, save_checkpoint
    m = build_model(tiny_encoder, "P")
    save_model(tmp_path / "m.ppgc", m)
    tensors, cfg = load_checkpoint(tmp_path / "m.ppgc")
    cfg["model"]["base_filters"] = 3
    save_checkpoint(tmp_path / "bad.ppgc", tensors, cfg)
    with pytest.raises(ModelConfigError):
        load_model(tmp_path / "bad.ppgc")


def test_eval_embedding_independent_of_batch(tiny_encoder):
    m = build_model(tiny_encoder, "P", 1)
    x = np.random.default_rng(0).normal(size=(9, 64))
    full = embed_numpy(m, x, batch_size=9)
    alone = embed_numpy(m, x[4:5])
    np.testing.assert_allclose(alone[0], full[4], rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(embed_numpy(m, x), embed_numpy(m, x))

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppgmorph.autodiff import functional as F
from ppgmorph.autodiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ppgmorph.autodiff.gradcheck import gradcheck, numeric_grad
from ppgmorph.autodiff.nn import BatchNorm1d, Conv1d, Linear, Parameter
from ppgmorph.autodiff.optim import Adam, adam_step
from ppgmorph.autodiff.tensor import Tensor, no_grad
from ppgmorph.selftest import CASES


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_conv_hand_cases():
    x = T([[[1, 2, 3, 4, 5]]])
    assert F.conv1d(x, T([[[1, 1, 1]]])).data.ravel().tolist() == [6, 9, 12]
    np.testing.assert_array_equal(F.conv1d(x, T([[[1.0]]])).data, x.data)
    # stride 2, one zero on each side: windows [0,1,2], [2,3,4], [4,5,0]
    assert F.conv1d(x, T([[[1, 1, 1]]]), None, 2, (1, 1)).data.ravel().tolist() == [3, 9, 9]


def test_batchnorm_train_and_eval():
    rng = np.random.default_rng(0)
    x = T(rng.normal(3, 2, size=(8, 3, 20)))
    bn = BatchNorm1d(3, dtype=np.float64)
    y = bn(x).data
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-4)
    np.testing.assert_allclose(bn._buffers["running_mean"], 0.1 * x.data.mean(axis=(0, 2)))
    fresh = BatchNorm1d(3, dtype=np.float64).eval()
    np.testing.assert_allclose(fresh(x).data, x.data / np.sqrt(1 + 1e-5))


def test_small_ops():
    assert T([-1.0, 2.0]).relu().data.tolist() == [0, 2]
    s = F.softmax(T(np.random.default_rng(0).normal(size=(4, 6))), 1).data
    np.testing.assert_allclose(s.sum(axis=1), 1)
    assert F.max_pool1d(T([[[1, 3, 3, 2, 5, 5]]]), 3, 1, (1, 1)).data.ravel().tolist() == [3, 3, 3, 5, 5, 5]


def test_maxpool_tie_gradient_goes_to_first():
    x = T([[[1, 3, 3, 2, 5, 5]]], grad=True)
    F.max_pool1d(x, 3, 1, (1, 1)).sum().backward()
    assert x.grad.ravel().tolist() == [0, 3, 0, 0, 3, 0]


def test_dropout_modes():
    x = T(np.ones((50, 40)))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(F.dropout(x, 0.5, False, rng).data, x.data)
    y = F.dropout(x, 0.5, True, rng).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs((y == 0).mean() - 0.5) < 0.05


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradcheck(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(3):
        fn, inputs = CASES[name](rng)
        assert gradcheck(fn, inputs) < 1e-4


def test_gradcheck_catches_wrong_backward():
    x = T([0.3, -1.2], grad=True)

    def bad(x):
        out = Tensor._make(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2
        return out.sum()

    with pytest.raises(AssertionError):
        gradcheck(bad, [x])
    with pytest.raises(TypeError):
        gradcheck(lambda x: x.sum(), [Tensor(np.ones(2, np.float32), requires_grad=True)])


def test_numeric_grad_of_cubic():
    x = T([2.0], grad=True)
    g = numeric_grad(lambda x: (x ** 3).sum(), [x], 0)
    assert g[0] == pytest.approx(12.0, rel=1e-8)


def test_grad_accumulates_through_reuse():
    x = T([1.5, -2.0], grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_builds_no_graph():
    x = T([1.0], grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_adam_hand_step():
    p = Parameter(np.array([0.0]))
    p.grad = np.array([1.0])
    opt = Adam([p], lr=0.1)
    adam_step([p], opt)
    # bias-corrected m_hat = v_hat = 1 on the first step
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_grad_and_determinism():
    p = Parameter(np.array([0.7, -0.2]))
    p.grad = np.zeros(2)
    Adam([p], lr=0.1).step()
    assert p.data.tolist() == [0.7, -0.2]

    def run():
        lin = Linear(4, 2, rng=3, dtype=np.float64)
        opt = Adam(lin.parameters(), lr=0.01)
        x = np.random.default_rng(5).normal(size=(6, 4))
        for _ in range(5):
            (lin(T(x)) ** 2).sum().backward()
            opt.step()
        return lin.weight.data.copy()

    assert run().tobytes() == run().tobytes()


def test_checkpoint_roundtrip(tmp_path):
    t = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], np.float32)}
    save_checkpoint(tmp_path / "c.ppgc", t, {"k": [1, 2]})
    back, cfg = load_checkpoint(tmp_path / "c.ppgc")
    assert cfg == {"k": [1, 2]}
    for k in t:
        np.testing.assert_array_equal(back[k], t[k])


def test_checkpoint_layout_and_errors(tmp_path):
    p = tmp_path / "c.ppgc"
    save_checkpoint(p, {"w": np.array([[2.0]])}, {})
    raw = p.read_bytes()
    assert raw[:4] == b"PPGC"
    version, cfg_len = struct.unpack_from("<HI", raw, 4)
    assert (version, cfg_len) == (1, 2)
    pos = 10 + cfg_len
    assert struct.unpack_from("<IH", raw, pos) == (1, 1)
    assert raw[pos + 6:pos + 7] == b"w"
    assert struct.unpack_from("<B2If", raw, pos + 7) == (2, 1, 1, 2.0)
    p.write_bytes(raw[:-2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(p)
    p.write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(3, 12), st.integers(1, 3))
def test_conv_matches_direct_sum(batch, c_in, length, stride):
    rng = np.random.default_rng(length * 7 + stride)
    x = rng.normal(size=(batch, c_in, length))
    w = rng.normal(size=(2, c_in, 3))
    out = F.conv1d(T(x), T(w), None, stride, 0).data
    for j in range(out.shape[2]):
        ref = np.einsum("bck,ock->bo", x[:, :, j * stride:j * stride + 3], w)
        np.testing.assert_allclose(out[:, :, j], ref, atol=1e-12)


def test_conv_module_same_padding():
    conv = Conv1d(1, 2, 3, stride=2, rng=0)
    assert conv(Tensor(np.zeros((1, 1, 1250)))).shape == (1, 2, 625)

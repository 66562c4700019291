"""Finite-difference checks of every differentiable op and of the full S-mode loss.

Each catalogue entry draws random shapes from a generator and returns
``(fn, inputs)`` for :func:`gradcheck`.  Everything runs in float64.
"""

from __future__ import annotations

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import gradcheck
from .autodiff.tensor import Tensor, concat, stack


def _t(rng, *shape, positive=False, requires_grad=True):
    a = rng.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    return Tensor(a, requires_grad=requires_grad, dtype=np.float64)


def _dims(rng, n, lo=1, hi=4):
    return [int(v) for v in rng.integers(lo, hi + 1, size=n)]


def _weights(rng, shape):
    # fixed random weights turn any tensor output into a generic scalar
    return rng.standard_normal(shape)


def case_elementwise(rng):
    shape = _dims(rng, 2)
    a, b = _t(rng, *shape), _t(rng, *shape, positive=True)
    w = _weights(rng, shape)
    return (lambda a, b: ((a * b + a / b - b - (-a)) * w).sum()
            + ((a ** 2) * w).sum() + (b.sqrt() * w).sum() + (b.log() * w).sum()
            + ((a * 0.3).exp() * w).sum()), [a, b]


def case_broadcast(rng):
    m, n = _dims(rng, 2, 2, 4)
    a, b = _t(rng, m, n), _t(rng, n)
    w = _weights(rng, (m, n))
    return (lambda a, b: ((a + b) * (a - b) * w).sum()), [a, b]


def case_abs_relu(rng):
    shape = _dims(rng, 2)
    a = _t(rng, *shape)
    a.data += np.sign(a.data) * 0.05  # keep away from the kink
    w = _weights(rng, shape)
    return (lambda a: (a.abs() * w).sum() + (a.relu() * w).sum()), [a]


def case_matmul(rng):
    m, k, n = _dims(rng, 3, 1, 5)
    a, b = _t(rng, m, k), _t(rng, k, n)
    w = _weights(rng, (m, n))
    return (lambda a, b: ((a @ b) * w).sum()), [a, b]


def case_reductions(rng):
    m, n, p = _dims(rng, 3, 2, 4)
    a = _t(rng, m, n, p)
    w1, w2 = _weights(rng, (m, 1, p)), _weights(rng, (n,))
    return (lambda a: (a.sum(axis=1, keepdims=True) * w1).sum() + (a.mean(axis=(0, 2)) * w2).sum()
            + a.mean()), [a]


def case_shape_ops(rng):
    m, n = _dims(rng, 2, 2, 4)
    a, b = _t(rng, m, n), _t(rng, m, n)
    idx = rng.integers(0, m, size=m + 1)
    w = _weights(rng, (2 * m, n))
    w2 = _weights(rng, (n, m))
    w3 = _weights(rng, (m + 1, n))
    return (lambda a, b: (concat([a, b], 0) * w).sum() + (a.T * w2).sum() + (a[idx] * w3).sum()
            + (stack([a, b], 1).reshape(m * 2 * n) * w.reshape(-1)).sum()), [a, b]


def case_conv1d(rng):
    batch, c_in, c_out = _dims(rng, 3, 1, 3)
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    length = int(rng.integers(k + 2, 11))
    pad = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    x, wt, b = _t(rng, batch, c_in, length), _t(rng, c_out, c_in, k), _t(rng, c_out)
    l_out = (length + sum(pad) - k) // stride + 1
    w = _weights(rng, (batch, c_out, l_out))
    return (lambda x, wt, b: (F.conv1d(x, wt, b, stride, pad) * w).sum()), [x, wt, b]


def case_batch_norm(rng):
    batch, c, length = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    x, g, b = _t(rng, batch, c, length), _t(rng, c), _t(rng, c)
    rm, rv = np.zeros(c), np.ones(c)
    w = _weights(rng, (batch, c, length))
    train = bool(rng.integers(0, 2))
    return (lambda x, g, b: (F.batch_norm(x, g, b, rm.copy(), rv.copy() + 0.5, train) * w).sum()), [x, g, b]


def case_max_pool(rng):
    batch, c = _dims(rng, 2, 1, 3)
    length = int(rng.integers(3, 10))
    stride = int(rng.integers(1, 3))
    pad = F.same_padding(length, 3, stride)
    # distinct values so the argmax is stable under the probe step
    x = Tensor(rng.permutation(batch * c * length).reshape(batch, c, length) * 0.1,
               requires_grad=True, dtype=np.float64)
    l_out = -(-length // stride)
    w = _weights(rng, (batch, c, l_out))
    return (lambda x: (F.max_pool1d(x, 3, stride, pad) * w).sum()), [x]


def case_softmax(rng):
    m, n = _dims(rng, 2, 2, 5)
    x = _t(rng, m, n)
    mask = rng.random((m, n)) < 0.3
    mask[:, 0] = False
    w = _weights(rng, (m, n))
    # masked entries go to -inf before log_softmax, then back to 0 so the sum stays finite
    return (lambda x: (F.softmax(x, 1) * w).sum()
            + (F.masked_fill(F.log_softmax(F.masked_fill(x, mask, -np.inf), 1), mask, 0.0) * w).sum()), [x]


def case_linear_l2norm(rng):
    m, d_in, d_out = _dims(rng, 3, 1, 4)
    x, wt, b = _t(rng, m, d_in), _t(rng, d_out, d_in), _t(rng, d_out)
    w = _weights(rng, (m, d_out))
    return (lambda x, wt, b: (F.l2_normalize(F.linear(x, wt, b), 1) * w).sum()), [x, wt, b]


def case_mae(rng):
    n = int(rng.integers(2, 7))
    p = _t(rng, n)
    target = p.data + np.where(rng.random(n) < 0.5, -1, 1) * (0.2 + rng.random(n))
    mask = rng.random(n) < 0.6
    return (lambda p: F.mae(p, target, mask) + F.mae(p, target)), [p]


def case_ntxent(rng):
    from .ssl import ntxent
    n = 2 * int(rng.integers(1, 5))
    d = int(rng.integers(2, 5))
    z = _t(rng, n, d)
    tau = float(rng.choice([0.07, 0.5, 1.0]))
    return (lambda z: ntxent(z, tau)), [z]


def case_moe(rng):
    from .model import MoEHead
    n, d = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    head = MoEHead(d, 3, 3, rng)
    head.to_dtype(np.float64)
    h = _t(rng, n, d)
    params = head.parameters()
    w = _weights(rng, (n,))
    return (lambda h, *_: (head(h) * w).sum()), [h, *params]


CASES = {
    "elementwise": case_elementwise, "broadcast": case_broadcast, "abs_relu": case_abs_relu,
    "matmul": case_matmul, "reductions": case_reductions, "shape_ops": case_shape_ops,
    "conv1d": case_conv1d, "batch_norm": case_batch_norm, "max_pool1d": case_max_pool,
    "softmax": case_softmax, "linear_l2norm": case_linear_l2norm, "mae": case_mae,
    "ntxent": case_ntxent, "moe": case_moe,
}


def s_mode_loss_case(seed: int = 0, alpha: float = 0.6):
    """Tiny float64 S-mode model; returns (fn, params) for a full-graph check."""
    from .model import EncoderConfig, build_model, encode, moe_predict, project
    from .ssl import loss_heads, loss_total_s, ntxent

    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(n_blocks=3, base_filters=2, double_every=2, dropout=0.0, embedding_dim=4,
                        input_len=24, expert_hidden=3, n_experts=3)
    model = build_model(cfg, "S", seed)
    model.to_dtype(np.float64)
    x = Tensor(rng.standard_normal((4, 1, cfg.input_len)), dtype=np.float64)
    t_ipa, t_sqi = rng.standard_normal(4) + 3.0, rng.standard_normal(4) - 3.0
    mask = np.array([True, False, True, True])

    def fn(*_):
        h = encode(model, x)
        l_con = ntxent(project(model, h), 0.5)
        l_ipa, l_sqi = loss_heads(moe_predict(model.ipa_head, h), moe_predict(model.sqi_head, h),
                                  t_ipa, t_sqi, mask)
        return loss_total_s(l_con, l_ipa, l_sqi, alpha)

    return fn, model.parameters()


def run_op_checks(n_shapes: int = 2, seed: int = 0, tol: float = 1e-4):
    """Yield ``(name, max_rel_error)`` for ``n_shapes`` random draws of every op."""
    rng = np.random.default_rng(seed)
    for name, make in CASES.items():
        for _ in range(n_shapes):
            fn, inputs = make(rng)
            yield name, gradcheck(fn, inputs, tol=tol)


def run_ntxent_oracle(n_batches: int = 200, seed: int = 0, max_rows: int = 16) -> float:
    """Largest |vectorized - double-loop| NT-Xent difference over random batches."""
    from .ssl import ntxent, ntxent_reference

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_batches):
        n = 2 * int(rng.integers(1, max_rows // 2 + 1))
        z = rng.standard_normal((n, int(rng.integers(1, 9))))
        tau = float(rng.choice([0.07, 0.5, 1.0]))
        a = ntxent(Tensor(z, dtype=np.float64), tau).item()
        worst = max(worst, abs(a - ntxent_reference(z, tau)))
    return worst

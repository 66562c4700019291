"""Layer-level differentiable ops on ``Tensor``."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor


def _pad_pair(padding):
    if isinstance(padding, (tuple, list)):
        return int(padding[0]), int(padding[1])
    return int(padding), int(padding)


def same_padding(length: int, kernel: int, stride: int):
    """(left, right) padding giving ``ceil(length / stride)`` outputs."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """1-D cross-correlation. ``x`` is [B, C_in, L], ``weight`` [C_out, C_in, K]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError("conv1d expects [B, C, L] input and [O, C, K] weight")
    B, C, L = x.shape
    O, Cw, K = weight.shape
    if Cw != C:
        raise ValueError(f"conv1d channel mismatch: input {C}, weight {Cw}")
    pl, pr = _pad_pair(padding)
    Lp = L + pl + pr
    if K > Lp:
        raise ValueError("kernel longer than padded input")
    L_out = (Lp - K) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if pl or pr else x.data
    # [B, C, L_out, K] -> [B, L_out, C*K]
    cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(B, L_out, C * K)
    w2 = weight.data.reshape(O, C * K)
    out = (cols2 @ w2.T).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 1)  # [B, L_out, O]
        gw = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols2, axes=([0, 1], [0, 1])).reshape(O, C, K)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(B, L_out, C, K)
            gxp = np.zeros((B, C, Lp), dtype=g.dtype)
            span = (L_out - 1) * stride + 1
            for k in range(K):
                gxp[:, :, k:k + span:stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, pl:pl + L]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped [out, in]."""
    out = x @ weight.transpose()
    return out + bias if bias is not None else out


def relu(x: Tensor) -> Tensor:
    return x.relu()


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch norm over all axes except the channel axis 1.

    In training mode the running buffers are updated in place (unbiased
    variance, as is conventional); evaluation uses them directly.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    n = x.data.size // x.shape[1]
    if training:
        if x.shape[0] < 2 and n < 2:
            raise ValueError("batch norm in train mode needs more than one value per channel")
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs batch >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean, running_var
    mu = mu.astype(x.dtype, copy=False)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = (inv.reshape(shape) / n) * (
                n * gxhat - gxhat.sum(axis=axes).reshape(shape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape))
        else:
            gx = gxhat * inv.reshape(shape)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), bw)


def max_pool1d(x: Tensor, kernel: int = 3, stride: int = 1, padding=0) -> Tensor:
    """Max pooling over the last axis; padded cells never win.

    Ties route the gradient to the first maximal index.
    """
    B, C, L = x.shape
    pl, pr = _pad_pair(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)), constant_values=-np.inf) if pl or pr else x.data
    Lp = xp.shape[2]
    L_out = (Lp - kernel) // stride + 1
    span = (L_out - 1) * stride + 1
    out = xp[:, :, 0:span:stride].copy()
    arg = np.zeros(out.shape, dtype=np.int8 if kernel < 128 else np.int32)
    for k in range(1, kernel):
        cand = xp[:, :, k:k + span:stride]
        better = cand > out  # strict: earlier index keeps ties
        np.copyto(out, cand, where=better)
        arg[better] = k

    def bw(g):
        gxp = np.zeros((B, C, Lp), dtype=g.dtype)
        for k in range(kernel):
            gxp[:, :, k:k + span:stride] += np.where(arg == k, g, 0)
        return (gxp[:, :, pl:pl + L],)

    return Tensor._make(out, (x,), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    if not training or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    mask = (rng.random(x.shape, dtype=np.float32) >= p).astype(x.dtype) / (1 - p)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return Tensor._make(s, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax; ``-inf`` entries stay ``-inf`` with zero gradient."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        g = np.where(np.isneginf(out), 0, g)
        return (g - s * g.sum(axis=axis, keepdims=True),)
    return Tensor._make(out, (x,), bw)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return Tensor._make(out, (x,), lambda g: (np.where(mask, 0, g),))


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = (x * x).sum(axis=axis, keepdims=True).sqrt()
    if np.any(norm.data == 0):
        raise ZeroDivisionError("zero-norm embedding row")
    return x / norm


def take_rows(x: Tensor, index) -> Tensor:
    return x[np.asarray(index)]


def mae(pred: Tensor, target, mask=None) -> Tensor:
    """Mean absolute error, averaged only over masked-in entries."""
    target = as_tensor(target, dtype=pred.dtype)
    err = (pred - target).abs()
    if mask is None:
        return err.mean()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return (err * 0.0).sum()
    return (err * mask.astype(pred.dtype)).sum() * (1.0 / mask.sum())

"""ResNet-style 1-D encoder, projection head and mixture-of-experts regressors.

Layout at default width (batch B, input length 1250)::

    stem        conv k3 + BN + ReLU                  [B,  32, 1250]
    block 0     conv, BN, ReLU, dropout, conv        [B,  32, 1250]
    blocks 1-3  BN, ReLU, dropout, conv, BN, ReLU,   [B,  32,  313]
    blocks 4-7    dropout, conv, maxpool             [B,  64,   79]
    blocks 8-11                                      [B, 128,   20]
    blocks 12-15                                     [B, 256,    5]
    blocks 16-17                                     [B, 512,    3]
    head        BN + ReLU, mean over length, linear  [B, 512]

Odd-numbered blocks halve the length (stride 2 on their first conv); channels
double every four blocks.  Every block has an additive shortcut: identity
when shapes match, otherwise a strided 1x1 conv.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.nn import BatchNorm1d, Conv1d, Dropout, Linear, MaxPool1d, Module, ReLU
from .autodiff.tensor import DEFAULT_DTYPE, Tensor, no_grad, stack


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 18
    base_filters: int = 32
    double_every: int = 4
    kernel: int = 3
    stride: int = 2
    pool_kernel: int = 3
    dropout: float = 0.5
    embedding_dim: int = 512
    input_len: int = 1250
    input_channels: int = 1
    expert_hidden: int = 256
    n_experts: int = 3

    def __post_init__(self):
        if self.embedding_dim <= 0:
            raise ModelConfigError("embedding_dim must be positive")
        if self.n_blocks < 1:
            raise ModelConfigError("n_blocks must be >= 1")
        if self.base_filters < 1 or self.kernel < 1 or self.stride < 1 or self.double_every < 1:
            raise ModelConfigError("filters, kernel, stride and double_every must be positive")
        if not 0 <= self.dropout < 1:
            raise ModelConfigError("dropout must lie in [0, 1)")
        if self.n_experts < 1 or self.expert_hidden < 1:
            raise ModelConfigError("expert sizes must be positive")

    def channels(self, block: int) -> int:
        return self.base_filters * 2 ** (block // self.double_every)

    def downsamples(self, block: int) -> bool:
        return block % 2 == 1

    def lengths(self) -> list[int]:
        """Sequence length after the stem and after each block."""
        out = [self.input_len]
        length = self.input_len
        for i in range(1, self.n_blocks):
            if self.downsamples(i):
                length = -(-length // self.stride)
            out.append(length)
        return out

    @property
    def final_channels(self) -> int:
        return self.channels(self.n_blocks - 1)

    def to_dict(self) -> dict:
        return asdict(self)


class BlockType1(Module):
    """conv, BN, ReLU, dropout, conv with identity shortcut."""

    def __init__(self, channels, cfg: EncoderConfig, rng, drop_rng):
        super().__init__()
        self.conv1 = Conv1d(channels, channels, cfg.kernel, rng=rng)
        self.bn = BatchNorm1d(channels)
        self.relu = ReLU()
        self.drop = Dropout(cfg.dropout, drop_rng)
        self.conv2 = Conv1d(channels, channels, cfg.kernel, rng=rng)

    def forward(self, x):
        out = self.conv2(self.drop(self.relu(self.bn(self.conv1(x)))))
        return out + x


class BlockType2(Module):
    """Pre-activation block; ``stride`` on the first conv, then a stride-1 max-pool."""

    def __init__(self, c_in, c_out, stride, cfg: EncoderConfig, rng, drop_rng):
        super().__init__()
        self.bn1 = BatchNorm1d(c_in)
        self.relu1 = ReLU()
        self.drop1 = Dropout(cfg.dropout, drop_rng)
        self.conv1 = Conv1d(c_in, c_out, cfg.kernel, stride=stride, rng=rng)
        self.bn2 = BatchNorm1d(c_out)
        self.relu2 = ReLU()
        self.drop2 = Dropout(cfg.dropout, drop_rng)
        self.conv2 = Conv1d(c_out, c_out, cfg.kernel, rng=rng)
        self.pool = MaxPool1d(cfg.pool_kernel, 1)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = Conv1d(c_in, c_out, 1, stride=stride, padding=0, rng=rng)

    def forward(self, x):
        out = self.conv1(self.drop1(self.relu1(self.bn1(x))))
        out = self.conv2(self.drop2(self.relu2(self.bn2(out))))
        out = self.pool(out)
        skip = x if self.shortcut is None else self.shortcut(x)
        return out + skip


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng, drop_rng):
        super().__init__()
        self.config = cfg
        c0 = cfg.channels(0)
        self.stem_conv = Conv1d(cfg.input_channels, c0, cfg.kernel, rng=rng)
        self.stem_bn = BatchNorm1d(c0)
        self.stem_relu = ReLU()
        self.blocks = [BlockType1(c0, cfg, rng, drop_rng)]
        for i in range(1, cfg.n_blocks):
            stride = cfg.stride if cfg.downsamples(i) else 1
            self.blocks.append(BlockType2(cfg.channels(i - 1), cfg.channels(i), stride, cfg, rng, drop_rng))
        c_last = cfg.final_channels
        self.final_bn = BatchNorm1d(c_last)
        self.final_relu = ReLU()
        self.fc = Linear(c_last, cfg.embedding_dim, rng=rng)

    def features(self, x):
        """Pre-pool feature map, e.g. [B, 512, 3] at default width."""
        h = self.stem_relu(self.stem_bn(self.stem_conv(x)))
        for block in self.blocks:
            h = block(h)
        return self.final_relu(self.final_bn(h))

    def forward(self, x):
        return self.fc(self.features(x).mean(axis=2))


class MoEHead(Module):
    """Softmax-gated sum of small two-layer regressors with scalar output."""

    def __init__(self, d_in, hidden, n_experts, rng):
        super().__init__()
        self.experts = [(Linear(d_in, hidden, rng=rng), Linear(hidden, 1, rng=rng)) for _ in range(n_experts)]
        self.gate = Linear(d_in, n_experts, rng=rng)

    def children(self):
        for i, (a, b) in enumerate(self.experts):
            yield f"expert{i}.fc1", a
            yield f"expert{i}.fc2", b
        yield "gate", self.gate

    def gate_weights(self, h: Tensor) -> Tensor:
        return F.softmax(self.gate(h), axis=-1)

    def expert_outputs(self, h: Tensor) -> Tensor:
        """[N, n_experts] matrix of expert predictions."""
        outs = [fc2(fc1(h).relu()) for fc1, fc2 in self.experts]
        return stack([o.reshape(-1) for o in outs], axis=1)

    def forward(self, h: Tensor) -> Tensor:
        return (self.gate_weights(h) * self.expert_outputs(h)).sum(axis=1)


class PpgModel(Module):
    """Encoder E and projection P; ``mode='S'`` adds the IPA and SQI heads."""

    def __init__(self, config: EncoderConfig, mode: str = "P", seed: int = 0):
        super().__init__()
        if mode not in ("P", "S"):
            raise ModelConfigError(f"mode must be 'P' or 'S', got {mode!r}")
        self.config, self.mode, self.seed = config, mode, seed
        rng = np.random.default_rng(seed)
        self.drop_rng = np.random.default_rng([seed, 1])
        self.encoder = Encoder(config, rng, self.drop_rng)
        d = config.embedding_dim
        self.projection = Linear(d, d, rng=rng)
        self.ipa_head = self.sqi_head = None
        if mode == "S":
            self.ipa_head = MoEHead(d, config.expert_hidden, config.n_experts, rng)
            self.sqi_head = MoEHead(d, config.expert_hidden, config.n_experts, rng)

    def describe(self) -> dict:
        return {"model": self.config.to_dict(), "mode": self.mode, "seed": self.seed}


def build_model(config: EncoderConfig | None = None, mode: str = "P", seed: int = 0) -> PpgModel:
    config = config or EncoderConfig()
    lengths = config.lengths()
    if lengths[-1] < config.kernel:
        raise ModelConfigError(
            f"input length {config.input_len} collapses to {lengths[-1]} < kernel {config.kernel}")
    return PpgModel(config, mode, seed)


def _as_input(model: PpgModel, batch) -> Tensor:
    if isinstance(batch, Tensor):
        x = batch
    else:
        arr = np.asarray(batch)
        x = Tensor(arr, dtype=model.encoder.stem_conv.weight.dtype)
    if x.ndim == 2:
        x = x.reshape(x.shape[0], 1, x.shape[1])
    cfg = model.config
    if x.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.input_len:
        raise ModelConfigError(
            f"expected input [B, {cfg.input_channels}, {cfg.input_len}], got {list(x.shape)}")
    return x


def encode(model: PpgModel, batch) -> Tensor:
    """Embeddings H, [N, embedding_dim]."""
    return model.encoder(_as_input(model, batch))


def project(model: PpgModel, h: Tensor) -> Tensor:
    """Projected embeddings Z, [N, embedding_dim]."""
    return model.projection(h)


def moe_predict(head: MoEHead, h: Tensor) -> Tensor:
    if h.ndim != 2 or h.shape[1] != head.gate.weight.shape[1]:
        raise ModelConfigError(f"MoE head expects [N, {head.gate.weight.shape[1]}], got {list(h.shape)}")
    return head(h)


def embed_numpy(model: PpgModel, segments, batch_size: int = 64) -> np.ndarray:
    """Eval-mode Z for an array of segments, computed in chunks."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for start in range(0, len(segments), batch_size):
                chunk = np.asarray(segments[start:start + batch_size])
                out.append(project(model, encode(model, chunk)).data.astype(np.float64))
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.config.embedding_dim))
    return np.concatenate(out, axis=0)


def save_model(path, model: PpgModel, extra_config: dict | None = None, extra_tensors: dict | None = None):
    """Write weights, BN running stats and the architecture config to one file."""
    config = model.describe()
    config.update(extra_config or {})
    tensors = dict(model.state_dict())
    tensors.update(extra_tensors or {})
    save_checkpoint(path, tensors, config)


def load_model(path):
    """Rebuild the exact architecture stored in a checkpoint.

    Returns ``(model, config, tensors)``; ``tensors`` keeps any extra entries
    (e.g. optimizer state) beside the model weights.
    """
    tensors, config = load_checkpoint(path)
    try:
        cfg = EncoderConfig(**config["model"])
        model = build_model(cfg, config["mode"], config.get("seed", 0))
    except (KeyError, TypeError) as exc:
        raise ModelConfigError(f"checkpoint config does not describe a model: {exc}") from None
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise ModelConfigError(f"checkpoint weights do not match its config: {exc}") from None
    model.eval()
    return model, config, tensors


__all__ = [
    "DEFAULT_DTYPE", "EncoderConfig", "Encoder", "MoEHead", "ModelConfigError", "PpgModel",
    "build_model", "embed_numpy", "encode", "load_model", "moe_predict", "project", "save_model",
]

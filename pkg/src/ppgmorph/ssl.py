"""Self-supervised pre-training: positive-pair batches, NT-Xent, head losses, loop.

Two positive-pair regimes share one loss routine:

* P mode -- two distinct segments of the same subject;
* S mode -- two distinct segments in the same sVRI bin (any subjects), with
  IPA and SQI regressed from the embedding by two mixture-of-experts heads.

Pairs are laid out consecutively, rows (2k, 2k+1) being partners.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, apply_pipeline
from .autodiff import functional as F
from .autodiff.optim import Adam
from .autodiff.tensor import Tensor
from .model import EncoderConfig, PpgModel, build_model, encode, moe_predict, project, save_model
from .morphology import BinEdges, LabelTable, try_segment_morphology


class TrainConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "S"
    temperature: float = 0.5
    alpha: float = 0.6
    batch_pairs: int = 64
    steps: int = 15000
    lr: float = 1e-4
    seed: int = 0
    n_bins: int = 8
    checkpoint_every: int = 1000
    fs_hz: float = 125.0

    def __post_init__(self):
        if self.mode not in ("P", "S"):
            raise TrainConfigError(f"mode must be 'P' or 'S', got {self.mode!r}")
        if not self.temperature > 0:
            raise TrainConfigError("temperature must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise TrainConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_pairs < 1:
            raise TrainConfigError("batch_pairs must be >= 1")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise TrainConfigError("steps and checkpoint_every must be >= 0")
        if not self.lr > 0:
            raise TrainConfigError("lr must be > 0")
        if self.n_bins < 2:
            raise TrainConfigError("n_bins must be >= 2")


@dataclass
class PairBatch:
    segments: np.ndarray          # [2N, L]
    source_index: np.ndarray      # [2N] rows of the corpus each member came from
    subject_ids: np.ndarray       # [2N]
    svri_bin: np.ndarray | None = None
    ipa: np.ndarray | None = None
    ipa_mask: np.ndarray | None = None
    sqi: np.ndarray | None = None

    @property
    def n_pairs(self):
        return len(self.segments) // 2


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def _groups(keys, allowed=None):
    """Map key -> row indices (only groups with >= 2 rows), in first-seen order."""
    out: dict = {}
    for i, k in enumerate(keys):
        if allowed is not None and not allowed[i]:
            continue
        out.setdefault(k, []).append(i)
    return {k: np.asarray(v) for k, v in out.items() if len(v) >= 2}


def _draw_pairs(groups: dict, n_pairs: int, rng, proportional: bool) -> np.ndarray:
    keys = list(groups)
    if proportional:
        sizes = np.array([len(groups[k]) for k in keys], dtype=np.float64)
        p = sizes / sizes.sum()
    else:
        p = None
    picks = rng.choice(len(keys), size=n_pairs, replace=True, p=p)
    rows = np.empty(2 * n_pairs, dtype=int)
    for k, g in enumerate(picks):
        rows[2 * k:2 * k + 2] = rng.choice(groups[keys[g]], size=2, replace=False)
    return rows


def sample_batch_p(segments, subject_ids, n_pairs: int, rng, augment: AugmentConfig | None = None) -> PairBatch:
    """Same-subject positive pairs, subjects drawn uniformly with replacement."""
    rng = np.random.default_rng(rng)
    subject_ids = np.asarray(subject_ids)
    groups = _groups(subject_ids)
    if not groups:
        raise ValueError("no subject has at least two segments")
    rows = _draw_pairs(groups, n_pairs, rng, proportional=False)
    augment = augment or AugmentConfig.for_mode("P")
    x = np.stack([apply_pipeline(segments[r], augment, rng) for r in rows]).astype(np.float32)
    return PairBatch(x, rows, subject_ids[rows])


def sample_batch_s(segments, labels: LabelTable, subject_ids, n_pairs: int, rng,
                   augment: AugmentConfig | None = None, fs: float = 125.0) -> PairBatch:
    """Same-sVRI-bin positive pairs; bins drawn in proportion to their population.

    Unlabelled segments (bin -1) are never drawn.  After augmentation the IPA
    and SQI targets are recomputed from the augmented signal; if the augmented
    copy no longer yields beats, the stored labels are used instead.  Pair
    membership follows the stored bins.
    """
    rng = np.random.default_rng(rng)
    subject_ids = np.asarray(subject_ids)
    groups = _groups(labels.svri_bin, allowed=labels.svri_bin >= 0)
    if not groups:
        raise ValueError("every sVRI bin has fewer than two labelled segments")
    rows = _draw_pairs(groups, n_pairs, rng, proportional=True)
    augment = augment or AugmentConfig.for_mode("S")
    xs, ipa_t, sqi_t = [], np.empty(len(rows)), np.empty(len(rows))
    for j, r in enumerate(rows):
        y = apply_pipeline(segments[r], augment, rng)
        ipa_t[j], sqi_t[j] = labels.ipa[r], labels.sqi[r]
        if not np.array_equal(y, segments[r]):
            fresh = try_segment_morphology(y, fs)
            if fresh is not None:
                ipa_t[j] = np.nan if fresh.ipa is None else fresh.ipa
                sqi_t[j] = fresh.sqi
        xs.append(y)
    mask = np.isfinite(ipa_t)
    return PairBatch(np.stack(xs).astype(np.float32), rows, subject_ids[rows],
                     labels.svri_bin[rows].copy(), np.where(mask, ipa_t, 0.0), mask, sqi_t)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def partner_index(n_rows: int) -> np.ndarray:
    return np.arange(n_rows) ^ 1


def ntxent(z: Tensor, temperature: float = 0.5) -> Tensor:
    """Symmetric NT-Xent over consecutive positive pairs of ``z`` ([2N, D])."""
    n = z.shape[0]
    if n < 2 or n % 2:
        raise ValueError("ntxent needs an even number (>= 2) of rows")
    zn = F.l2_normalize(z, axis=1)
    sim = (zn @ zn.T) * (1.0 / temperature)
    sim = F.masked_fill(sim, np.eye(n, dtype=bool), -np.inf)
    logp = F.log_softmax(sim, axis=1)
    picked = logp[np.arange(n), partner_index(n)]
    return -picked.mean()


def ntxent_reference(z, temperature: float = 0.5) -> float:
    """Scalar double loop over the pair loss, 1-based like the textbook formula.

    l(i, j) = -log( exp(s_ij / t) / sum_{k != i} exp(s_ik / t) )
    L = 1/(2N) * sum_k [ l(2k-1, 2k) + l(2k, 2k-1) ]
    """
    rows = [[float(v) for v in r] for r in np.asarray(z)]
    two_n = len(rows)

    def sim(i, j):
        a, b = rows[i - 1], rows[j - 1]
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        if na == 0 or nb == 0:
            raise ZeroDivisionError("zero-norm embedding row")
        return dot / (na * nb)

    def ell(i, j):
        num = math.exp(sim(i, j) / temperature)
        den = sum(math.exp(sim(i, k) / temperature) for k in range(1, two_n + 1) if k != i)
        return -math.log(num / den)

    total = 0.0
    for k in range(1, two_n // 2 + 1):
        total += ell(2 * k - 1, 2 * k) + ell(2 * k, 2 * k - 1)
    return total / two_n


def loss_heads(pred_ipa: Tensor, pred_sqi: Tensor, target_ipa, target_sqi, ipa_mask):
    """MAE losses; IPA is averaged over masked-in rows only (0 if none)."""
    return F.mae(pred_ipa, target_ipa, ipa_mask), F.mae(pred_sqi, target_sqi)


def loss_total_s(l_svri, l_ipa, l_sqi, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return l_svri * alpha + (l_ipa + l_sqi) * (1.0 - alpha)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("step", "total", "svri", "ipa", "sqi")


@dataclass
class TrainResult:
    model: PpgModel
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent stream per step, so a step's batch depends only on (seed, step)."""
    return np.random.default_rng([seed, 2, step])


def forward_losses(model: PpgModel, batch: PairBatch, cfg: TrainConfig):
    """Returns ``(total, parts)`` where parts maps svri/ipa/sqi to tensors (or None)."""
    h = encode(model, batch.segments)
    l_con = ntxent(project(model, h), cfg.temperature)
    if cfg.mode == "P":
        return l_con, {"svri": l_con, "ipa": None, "sqi": None}
    l_ipa, l_sqi = loss_heads(moe_predict(model.ipa_head, h), moe_predict(model.sqi_head, h),
                              batch.ipa, batch.sqi, batch.ipa_mask)
    return loss_total_s(l_con, l_ipa, l_sqi, cfg.alpha), {"svri": l_con, "ipa": l_ipa, "sqi": l_sqi}


def _fmt(t):
    return "" if t is None else repr(float(t.item()))


def train(segments, subject_ids, config: TrainConfig, labels: LabelTable | None = None,
          edges: BinEdges | None = None, model_config: EncoderConfig | None = None,
          out_dir=None, augment: AugmentConfig | None = None, progress=None) -> TrainResult:
    """Run ``config.steps`` Adam updates; optionally write checkpoints and a loss log.

    The log is a list of ``(step, total, svri, ipa, sqi)`` string rows (P mode
    leaves ipa/sqi blank) and is mirrored to ``out_dir/loss_log.csv``.
    """
    segments = np.asarray(segments, dtype=np.float32)
    if config.mode == "S" and (labels is None or edges is None):
        raise TrainConfigError("S-mode training needs morphology labels and fitted bin edges")
    model_config = model_config or EncoderConfig(input_len=segments.shape[1])
    model = build_model(model_config, config.mode, config.seed)
    model.train()
    names = [n for n, _ in model.named_parameters()]
    opt = Adam(model.parameters(), lr=config.lr)
    augment = augment or AugmentConfig.for_mode(config.mode)
    result = TrainResult(model)
    out = Path(out_dir) if out_dir is not None else None
    log_file = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "loss_log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)
    extra = {"train": asdict(config)}
    if edges is not None:
        extra["svri_edges"] = list(edges.edges)
    try:
        for step in range(1, config.steps + 1):
            rng = step_rng(config.seed, step)
            if config.mode == "P":
                batch = sample_batch_p(segments, subject_ids, config.batch_pairs, rng, augment)
            else:
                batch = sample_batch_s(segments, labels, subject_ids, config.batch_pairs, rng,
                                       augment, config.fs_hz)
            total, parts = forward_losses(model, batch, config)
            if not np.isfinite(total.item()):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            row = (str(step), _fmt(total), _fmt(parts["svri"]), _fmt(parts["ipa"]), _fmt(parts["sqi"]))
            total.backward()
            opt.step()
            result.log.append(row)
            if writer is not None:
                writer.writerow(row)
            if progress is not None:
                progress(step, row)
            last = step == config.steps
            if out is not None and (last or (config.checkpoint_every and step % config.checkpoint_every == 0)):
                path = out / f"ckpt_{step:06d}.ppgc"
                save_model(path, model, {**extra, "step": step}, opt.state(names))
                result.checkpoints.append(path)
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return result


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)

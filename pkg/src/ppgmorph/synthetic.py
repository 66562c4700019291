"""Seeded two-class synthetic corpus: notch-rich vs notch-poor subjects.

Each subject gets one long record built from ``synth_ppg`` with its own
heart rate and notch depth, then per-subject nuisance: a monotone amplitude
nonlinearity (intensity vs absorbance style), slow amplitude modulation,
respiratory-band baseline wander and white noise.  Records go through the
standard preprocessing pipeline, so segments look like any other store.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import PreprocessConfig, preprocess_pipeline
from .waveform_io import PpgRecord, synth_ppg


@dataclass(frozen=True)
class CorpusSpec:
    n_subjects: int = 100
    segments_per_subject: int = 20
    fs_hz: float = 125.0
    heart_rate_bpm: tuple = (50.0, 110.0)
    rich_depth: tuple = (0.5, 1.0)
    poor_depth: tuple = (0.0, 0.15)
    warp: float = 3.0          # |kappa| bound of the exp-warp nonlinearity
    noise_rel: float = 0.1     # noise sd relative to the record sd
    wander: float = 0.3


@dataclass
class Corpus:
    segments: np.ndarray   # [M, 1250] float32
    subject_ids: np.ndarray
    labels: np.ndarray     # 1 = notch-rich subject
    depths: np.ndarray     # per-segment notch depth of its subject


def _warp(x, kappa):
    x = (x - x.min()) / np.ptp(x)
    if abs(kappa) < 1e-6:
        return x
    return np.expm1(kappa * x) / np.expm1(kappa)


def subject_record(spec: CorpusSpec, subject: int, rng) -> tuple[PpgRecord, int, float]:
    """One subject's raw record; returns ``(record, class_label, notch_depth)``."""
    cls = subject % 2
    depth = rng.uniform(*(spec.rich_depth if cls else spec.poor_depth))
    hr = rng.uniform(*spec.heart_rate_bpm)
    duration = spec.segments_per_subject * PreprocessConfig().window_s
    rec, _ = synth_ppg(hr, spec.fs_hz, duration, depth, 0.0, seed=int(rng.integers(2**31)))
    x = _warp(rec.samples, rng.uniform(-spec.warp, spec.warp))
    t = np.arange(x.size) / spec.fs_hz
    x = x * (1 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.05, 0.15) * t))
    x = x + spec.wander * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    x = x + rng.normal(0.0, spec.noise_rel * np.std(x), x.size)
    return PpgRecord(f"s{subject:03d}", spec.fs_hz, x, "synthetic"), cls, depth


def morphology_corpus(spec: CorpusSpec = CorpusSpec(), seed: int = 0) -> Corpus:
    rng = np.random.default_rng(seed)
    cfg = PreprocessConfig(target_fs=spec.fs_hz)
    segs, sids, labels, depths = [], [], [], []
    for s in range(spec.n_subjects):
        rec, cls, depth = subject_record(spec, s, rng)
        out, _ = preprocess_pipeline(rec, cfg)
        for seg in out:
            segs.append(seg.values)
            sids.append(rec.subject_id)
            labels.append(cls)
            depths.append(depth)
    return Corpus(np.asarray(segs, dtype=np.float32), np.asarray(sids), np.asarray(labels),
                  np.asarray(depths))

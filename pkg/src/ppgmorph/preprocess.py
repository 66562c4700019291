"""Cleaning pipeline: bandpass, windowing, flatline rejection, z-score, resample."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .waveform_io import PpgRecord, resample

logger = logging.getLogger(__name__)

TARGET_FS = 125.0


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    order: int = 4
    low_cut_hz: float = 0.5
    high_cut_hz: float = 12.0
    stopband_atten_db: float = 40.0


@dataclass
class Segment:
    values: np.ndarray
    subject_id: str
    index: int
    fs_hz: float = TARGET_FS
    source_tag: str = ""


@dataclass
class PreprocessConfig:
    window_s: float = 10.0
    flat_threshold: float = 0.25
    flat_eps_rel: float = 1e-4
    flat_min_run: int = 5
    target_fs: float = TARGET_FS
    filter: FilterSpec = field(default_factory=FilterSpec)


@dataclass
class PreprocessReport:
    subject_id: str
    n_windows: int = 0
    n_kept: int = 0
    n_flat: int = 0
    n_zero_variance: int = 0

    @property
    def n_dropped(self):
        return self.n_windows - self.n_kept


@functools.lru_cache(maxsize=64)
def design_bandpass(fs_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Chebyshev type II bandpass whose -3 dB points sit at the spec cut-offs.

    scipy's ``cheby2`` takes stopband edges, so the edges are solved for
    numerically such that the single-pass gain at each cut-off is -3 dB.
    """
    lo, hi = spec.low_cut_hz, spec.high_cut_hz
    if not 0 < lo < hi < fs_hz / 2:
        raise PreprocessError(f"sampling rate {fs_hz} Hz too low for cut-offs {lo}-{hi} Hz")
    nyq = fs_hz / 2

    def residual(log_edges):
        e_lo, e_hi = np.exp(log_edges)
        e_hi = min(e_hi, nyq * 0.999)
        sos = signal.cheby2(spec.order, spec.stopband_atten_db, [e_lo, e_hi], "bandpass",
                            fs=fs_hz, output="sos")
        _, h = signal.sosfreqz(sos, worN=[lo, hi], fs=fs_hz)
        return 20 * np.log10(np.abs(h)) + 10 * np.log10(2)

    guess = [np.log(lo * 0.5), np.log(min(hi * 1.8, nyq * 0.99))]
    sol, info, ok, _ = optimize.fsolve(residual, guess, full_output=True)
    edges = np.exp(sol)
    if ok != 1 or not 0 < edges[0] < lo or not hi < edges[1] < nyq:
        # cut-off too close to Nyquist for a -3 dB solve; fall back to the raw edges
        logger.warning("bandpass edge solve failed at fs=%s; using nominal edges", fs_hz)
        edges = np.array([lo, hi])
    return signal.cheby2(spec.order, spec.stopband_atten_db, edges, "bandpass", fs=fs_hz, output="sos")


def bandpass_filter(samples, fs_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase (forward-backward) Chebyshev II bandpass."""
    x = np.asarray(samples, dtype=np.float64)
    if fs_hz <= 2 * spec.high_cut_hz:
        raise PreprocessError("sampling rate too low for cut-off")
    sos = design_bandpass(float(fs_hz), spec)
    padlen = 3 * (2 * len(sos) + 1)
    if x.size <= 3 * spec.order or x.size <= padlen:
        raise PreprocessError("input too short to filter")
    return signal.sosfiltfilt(sos, x)


def segment_record(record: PpgRecord, window_s: float = 10.0, samples=None) -> list[np.ndarray]:
    """Non-overlapping windows; the trailing remainder is discarded.

    ``samples`` overrides the record's raw samples (e.g. a filtered copy).
    """
    x = record.samples if samples is None else np.asarray(samples)
    win = int(round(window_s * record.sampling_rate_hz))
    n_windows = x.size // win
    if n_windows < 1:
        raise PreprocessError(f"record shorter than one {window_s} s window")
    return [x[i * win:(i + 1) * win].copy() for i in range(n_windows)]


def flatline_fraction(window, eps: float, min_run: int = 5) -> float:
    """Fraction of samples inside runs of >= ``min_run`` samples with |dx| < eps."""
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise PreprocessError("empty window")
    if x.size == 1:
        return 1.0 if min_run <= 1 else 0.0
    small = np.abs(np.diff(x)) < eps
    # a run of k small steps covers k + 1 samples
    flat = np.zeros(x.size, dtype=bool)
    padded = np.concatenate([[False], small, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start + 1 >= min_run:
            flat[start:stop + 1] = True
    return float(flat.mean())


def zscore(window, eps_std: float = 1e-8) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    sd = x.std()
    if not sd > eps_std:
        raise PreprocessError("zero variance")
    return (x - x.mean()) / sd


def preprocess_pipeline(record: PpgRecord, config: PreprocessConfig | None = None):
    """Run the five cleaning steps on one record.

    Returns ``(segments, report)``.  Window indices in the output keep their
    position in the record so dropped windows leave gaps.
    """
    cfg = config or PreprocessConfig()
    fs = record.sampling_rate_hz
    filtered = bandpass_filter(record.samples, fs, cfg.filter)
    windows = segment_record(record, cfg.window_s, samples=filtered)
    eps = cfg.flat_eps_rel * float(np.ptp(filtered))
    n_out = int(round(cfg.window_s * cfg.target_fs))
    report = PreprocessReport(record.subject_id, n_windows=len(windows))
    out = []
    for i, w in enumerate(windows):
        if flatline_fraction(w, eps, cfg.flat_min_run) > cfg.flat_threshold:
            report.n_flat += 1
            continue
        try:
            z = zscore(w)
            z = resample(z, fs, cfg.target_fs)
            # resampling perturbs the moments slightly; restore them
            z = zscore(z)
        except PreprocessError:
            report.n_zero_variance += 1
            continue
        if z.size != n_out:
            raise PreprocessError(f"resampled window has {z.size} samples, expected {n_out}")
        out.append(Segment(z, record.subject_id, i, cfg.target_fs, record.source_tag))
    report.n_kept = len(out)
    return out, report

"""Raw PPG record loading, resampling, synthetic pulses and the segment store."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

STORE_MAGIC = b"PPGS"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sHfII")


class WaveformError(ValueError):
    """Raised for malformed records or store files."""


@dataclass
class PpgRecord:
    subject_id: str
    sampling_rate_hz: float
    samples: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not self.sampling_rate_hz > 0:
            raise WaveformError("sampling rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise WaveformError("samples must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise WaveformError("non-finite sample")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz


@dataclass
class SynthMarkers:
    """Ground-truth sample indices of a synthetic trace."""

    onsets: np.ndarray
    systolic_peaks: np.ndarray
    notches: np.ndarray | None
    # per-beat closed-form areas of the noise-free waveform split at the notch
    area_before_notch: np.ndarray | None = None
    area_after_notch: np.ndarray | None = None
    clean: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_record(path, format: str = "csv", sampling_rate_hz: float | None = None,
                subject_id: str | None = None, source_tag: str = "") -> PpgRecord:
    """Load one PPG trace.

    CSV files hold one amplitude per line; an optional leading comment line
    ``# fs=<hz>`` (or ``# sampling_rate_hz=<hz>``) carries the rate.  Binary
    files are raw little-endian float32 samples; the rate then has to come from
    ``sampling_rate_hz``.  An explicit ``sampling_rate_hz`` always wins.
    """
    path = Path(path)
    if not path.exists():
        raise WaveformError(f"no such file: {path}")
    header_rate = None
    if format == "csv":
        values = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh)):
                if not row or not row[0].strip():
                    continue
                cell = row[0].strip()
                if cell.startswith("#"):
                    key, _, val = cell.lstrip("#").partition("=")
                    if key.strip() in ("fs", "sampling_rate_hz"):
                        header_rate = float(val)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise WaveformError(f"malformed value on line {lineno + 1}: {cell!r}") from None
        samples = np.asarray(values, dtype=np.float64)
    elif format == "binary":
        raw = path.read_bytes()
        if len(raw) % 4:
            raise WaveformError("binary record length is not a multiple of 4 bytes")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise WaveformError(f"unknown record format {format!r}")

    rate = sampling_rate_hz if sampling_rate_hz is not None else header_rate
    if rate is None:
        raise WaveformError("missing sampling rate")
    if samples.size == 0:
        raise WaveformError("empty record")
    if not np.all(np.isfinite(samples)):
        raise WaveformError("non-finite sample")
    return PpgRecord(subject_id or path.stem, float(rate), samples, source_tag)


def write_record(record: PpgRecord, path) -> None:
    """CSV counterpart of :func:`load_record` (rate in a ``# fs=`` header)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs={record.sampling_rate_hz!r}\n")
        for v in record.samples:
            fh.write(f"{float(v)!r}\n")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _kaiser_taps(up: int, down: int) -> np.ndarray:
    # the filter resample_poly would design for window=("kaiser", 5.0)
    max_rate = max(up, down)
    return signal.firwin(20 * max_rate + 1, 1.0 / max_rate, window=("kaiser", 5.0))


def _resample_ratio(x, ratio: Fraction) -> np.ndarray:
    return signal.resample_poly(x, ratio.numerator, ratio.denominator,
                                window=_kaiser_taps(ratio.numerator, ratio.denominator))


def resample_to_length(samples, n_out: int) -> np.ndarray:
    """Polyphase Kaiser-windowed sinc resampling to exactly ``n_out`` samples."""
    x = np.asarray(samples, dtype=np.float64)
    n_in = x.size
    if n_in < 2:
        raise WaveformError("input too short to resample")
    if n_out == n_in:
        return x.copy()
    y = _resample_ratio(x, Fraction(n_out, n_in))
    return _fit_length(y, n_out)


def resample(samples, from_hz: float, to_hz: float) -> np.ndarray:
    if not (from_hz > 0 and to_hz > 0):
        raise WaveformError("sampling rates must be positive")
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise WaveformError("input too short to resample")
    if from_hz == to_hz:
        return x.copy()
    n_out = int(round(x.size * to_hz / from_hz))
    y = _resample_ratio(x, Fraction(to_hz / from_hz).limit_denominator(1000))
    return _fit_length(y, n_out)


def _fit_length(y: np.ndarray, n: int) -> np.ndarray:
    if y.size >= n:
        return y[:n].copy()
    return np.concatenate([y, np.full(n - y.size, y[-1])])


# ---------------------------------------------------------------------------
# synthetic pulses
# ---------------------------------------------------------------------------

# beat template, as fractions of the beat period
SYS_RISE = 0.15
SYS_FALL = 0.35
DIC_START = 0.40
# dicrotic peak height relative to the systolic peak at notch_depth = 1
DIC_MAX_AMP = 0.6


def _raised_cosine_area(t0, t1, start, width):
    """Integral over [t0, t1] of 0.5*(1 - cos(2*pi*(t - start)/width)) on its support."""
    a, b = max(t0, start), min(t1, start + width)
    if b <= a:
        return 0.0

    def prim(t):
        return 0.5 * (t - start) - width / (4 * np.pi) * np.sin(2 * np.pi * (t - start) / width)

    return prim(b) - prim(a)


def _systolic_area(t0, t1, period):
    rise, fall = SYS_RISE * period, SYS_FALL * period
    total = 0.0
    # rising quarter: 0.5*(1 - cos(pi*t/rise)) on [0, rise]
    a, b = max(t0, 0.0), min(t1, rise)
    if b > a:
        total += 0.5 * (b - a) - rise / (2 * np.pi) * (np.sin(np.pi * b / rise) - np.sin(np.pi * a / rise))
    # falling half: 0.5*(1 + cos(pi*(t-rise)/fall)) on [rise, rise+fall]
    a, b = max(t0, rise), min(t1, rise + fall)
    if b > a:
        total += 0.5 * (b - a) + fall / (2 * np.pi) * (
            np.sin(np.pi * (b - rise) / fall) - np.sin(np.pi * (a - rise) / fall))
    return total


def beat_template(t, period: float, dicrotic_amp: float) -> np.ndarray:
    """Single-beat waveform evaluated at times ``t`` (seconds from onset)."""
    t = np.asarray(t, dtype=np.float64)
    rise, fall = SYS_RISE * period, SYS_FALL * period
    out = np.zeros_like(t)
    up = (t >= 0) & (t < rise)
    out[up] = 0.5 * (1 - np.cos(np.pi * t[up] / rise))
    down = (t >= rise) & (t <= rise + fall)
    out[down] = 0.5 * (1 + np.cos(np.pi * (t[down] - rise) / fall))
    if dicrotic_amp > 0:
        start, width = DIC_START * period, (1 - DIC_START) * period
        dic = (t >= start) & (t <= start + width)
        out[dic] += dicrotic_amp * 0.5 * (1 - np.cos(2 * np.pi * (t[dic] - start) / width))
    return out


def synth_ppg(heart_rate_bpm: float = 60.0, fs_hz: float = 125.0, duration_s: float = 10.0,
              notch_depth: float = 0.5, noise_sigma: float = 0.0, seed: int = 0,
              subject_id: str = "synth", source_tag: str = "synth"):
    """Deterministic pulse train with known beat markers.

    Each beat is a raised-cosine systolic lobe followed by a dicrotic lobe
    that overlaps the systolic tail, producing a notch.  The dicrotic peak is
    ``0.6 * notch_depth`` times the systolic peak.  Returns
    ``(record, markers)``.
    """
    if not 30 <= heart_rate_bpm <= 220:
        raise WaveformError("heart rate out of range [30, 220] bpm")
    if not duration_s > 0:
        raise WaveformError("duration must be positive")
    if not 0 <= notch_depth <= 1:
        raise WaveformError("notch_depth must lie in [0, 1]")
    if noise_sigma < 0:
        raise WaveformError("noise_sigma must be nonnegative")

    n = int(round(duration_s * fs_hz))
    dic_amp = DIC_MAX_AMP * notch_depth
    period = 60.0 / heart_rate_bpm
    t = np.arange(n) / fs_hz
    n_beats = int(np.ceil(duration_s / period - 1e-9))
    clean = np.zeros(n)
    beat_starts = np.arange(n_beats) * period
    for t0 in beat_starts:
        clean += beat_template(t - t0, period, dic_amp)

    onsets = np.round(beat_starts * fs_hz).astype(int)
    onsets = onsets[onsets < n]
    sys_idx = np.round((beat_starts + SYS_RISE * period) * fs_hz).astype(int)
    sys_idx = sys_idx[sys_idx < n]

    notches = None
    area_before = area_after = None
    if notch_depth > 0:
        # notch time is the minimum of the noise-free single-beat template
        tt = np.linspace(SYS_RISE * period, (DIC_START + 0.5 * (1 - DIC_START)) * period, 20001)
        t_notch = tt[np.argmin(beat_template(tt, period, dic_amp))]
        notches = np.round((beat_starts + t_notch) * fs_hz).astype(int)
        notches = notches[notches < n]
        start, width = DIC_START * period, (1 - DIC_START) * period
        area_before = _systolic_area(0, t_notch, period) + dic_amp * _raised_cosine_area(0, t_notch, start, width)
        area_after = _systolic_area(t_notch, period, period) + dic_amp * _raised_cosine_area(t_notch, period, start, width)
        area_before = np.full(notches.size, area_before)
        area_after = np.full(notches.size, area_after)

    rng = np.random.default_rng(seed)
    samples = clean + (rng.normal(0.0, noise_sigma, n) if noise_sigma > 0 else 0.0)
    record = PpgRecord(subject_id, float(fs_hz), samples, source_tag)
    markers = SynthMarkers(onsets, sys_idx, notches, area_before, area_after, clean)
    return record, markers


# ---------------------------------------------------------------------------
# segment store
# ---------------------------------------------------------------------------

def write_store(segments, meta, path, sampling_rate_hz: float = 125.0) -> None:
    """Write segments as a ``PPGS`` v1 store plus a ``.meta`` JSON-lines sidecar.

    ``meta`` is a sequence of dicts with keys ``subject_id``, ``index`` and
    ``source_tag``.
    """
    path = Path(path)
    segs = [np.asarray(s) for s in segments]
    if len(segs) != len(meta):
        raise WaveformError("metadata not aligned with segments")
    seg_len = segs[0].size if segs else 0
    if any(s.ndim != 1 or s.size != seg_len for s in segs):
        raise WaveformError("all segments must be 1-D and of equal length")
    payload = np.asarray(segs, dtype="<f4").reshape(len(segs), seg_len) if segs else np.zeros((0, 0), "<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, sampling_rate_hz, seg_len, len(segs)))
        fh.write(payload.tobytes())
    with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
        for m in meta:
            rec = {"subject_id": str(m["subject_id"]), "index": int(m["index"]),
                   "source_tag": str(m.get("source_tag", ""))}
            fh.write(json.dumps(rec) + "\n")


def read_store(path):
    """Return ``(segments [count, length] float32, meta list, sampling_rate_hz)``."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise WaveformError("header mismatch: file too short")
    magic, version, fs, seg_len, count = _HEADER.unpack_from(raw, 0)
    if magic != STORE_MAGIC:
        raise WaveformError("header mismatch: bad magic")
    if version != STORE_VERSION:
        raise WaveformError(f"version unknown: {version}")
    expected = count * seg_len * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise WaveformError("truncated payload")
    if len(payload) > expected:
        raise WaveformError("header mismatch: trailing bytes after payload")
    segments = np.frombuffer(payload, dtype="<f4").reshape(count, seg_len).copy()
    meta_path = Path(str(path) + ".meta")
    meta = []
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as fh:
            meta = [json.loads(line) for line in fh if line.strip()]
    if len(meta) != count:
        raise WaveformError("sidecar record count does not match segment count")
    return segments, meta, float(fs)

"""Beat landmarks and the three morphology metrics (sVRI, IPA, SQI).

sVRI and IPA are defined per pulse; a 10 s segment holds several, so the
segment label is the mean over detected beats.  SQI is the windowed skewness
of the whole segment.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

MIN_HR_BPM = 30.0
MAX_HR_BPM = 220.0
SQI_WINDOW_S = 5.0
SHIFT_EPS_REL = 1e-3
NOTCH_MIN_RISE = 0.1
# normalised autocorrelation a pulse train must reach at its beat period;
# PPG sits above 0.8, white noise below 0.25
PERIODICITY_MIN = 0.5


class NoBeatsError(ValueError):
    """No usable beat in the segment; morphology labels are unavailable."""


@dataclass(frozen=True)
class BeatMarkers:
    onset: int
    sys: int
    end: int  # exclusive
    notch: int | None = None

    def __post_init__(self):
        if not self.onset < self.sys < self.end:
            raise ValueError(f"invalid beat markers {self}")
        if self.notch is not None and not self.sys < self.notch < self.end:
            raise ValueError(f"notch outside (sys, end): {self}")

    @property
    def length(self):
        return self.end - self.onset


@dataclass
class MorphologyLabels:
    svri: float
    ipa: float | None
    sqi: float
    svri_bin: int | None = None
    n_beats: int = 0


@dataclass(frozen=True)
class BinEdges:
    edges: tuple

    @property
    def b(self):
        return len(self.edges) + 1

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.float64)
        if e.size and np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly ascending")


SMOOTH_CUTOFF_HZ = 7.0
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@lru_cache(maxsize=16)
def _smooth_design(fs):
    return signal.butter(2, min(SMOOTH_CUTOFF_HZ, 0.4 * fs), fs=fs)


def _smooth(x, fs):
    """Zero-phase low-pass used only for landmark search."""
    b, a = _smooth_design(float(fs))
    if x.size <= 3 * max(len(a), len(b)):
        return x
    return signal.filtfilt(b, a, x)


def dominant_period(x, fs: float) -> float | None:
    """Beat period in samples, or None if aperiodic.

    Uses the autocorrelation of the positive slope, which is dominated by the
    steep systolic upstroke rather than the dicrotic wave.
    """
    up = np.clip(np.gradient(x), 0, None)
    c = up - up.mean()
    n = c.size
    spec = np.fft.rfft(c, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:n]
    if ac[0] <= 0:
        return None
    ac = ac / ac[0]
    lo = int(np.ceil(fs * 60.0 / MAX_HR_BPM))
    hi = min(int(np.floor(fs * 60.0 / MIN_HR_BPM)), n - 1)
    peaks, _ = signal.find_peaks(ac[:hi + 1])
    peaks = peaks[peaks >= lo]
    if peaks.size == 0:
        return None
    best = ac[peaks].max()
    if best < PERIODICITY_MIN:
        return None
    # earliest lag nearly as strong as the best one; guards against 2T, 3T picks
    return float(peaks[np.argmax(ac[peaks] >= 0.85 * best)])


def _peak_smooth(x, fs):
    """Savitzky-Golay copy; keeps extrema in place better than the low-pass."""
    win = max(5, int(round(0.1 * fs)) | 1)
    if x.size <= win:
        return x
    return signal.savgol_filter(x, win, 3)


def detect_beats(values, fs: float = 125.0, smoothed=None) -> list[BeatMarkers]:
    """Locate complete beats via their systolic upstrokes.

    Upstrokes are peaks of the first derivative of a low-passed copy, at
    least 60/220 s and 0.6 autocorrelation periods apart, so the slower
    dicrotic rise inside each cycle is not mistaken for a new beat.  Segments
    without a clear autocorrelation period (noise) have no beats.  A beat runs from
    its onset (the minimum before the upstroke) to the next onset; beats cut
    by either segment edge are dropped.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2 * fs:
        raise NoBeatsError("segment shorter than 2 s")
    xs = _smooth(x, fs) if smoothed is None else smoothed
    xp = _peak_smooth(x, fs)
    d = np.gradient(xs)
    min_gap = int(np.ceil(fs * 60.0 / MAX_HR_BPM))
    max_gap = int(np.floor(fs * 60.0 / MIN_HR_BPM))
    ref = np.percentile(d, 99.5)
    if not ref > 0:
        raise NoBeatsError("no upstrokes")
    period = dominant_period(xs, fs)
    if period is None:
        raise NoBeatsError("no beats found: segment is not periodic")
    distance = max(min_gap, int(0.6 * period))
    ups, _ = signal.find_peaks(d, distance=distance, height=0.5 * ref)
    if ups.size < 2:
        raise NoBeatsError("fewer than two upstrokes")

    # onset: nearest local minimum before each upstroke
    onsets = []
    prev = 0
    for u in ups:
        lo = max(prev, u - max_gap)
        on = u
        while on > lo and xs[on - 1] <= xs[on]:
            on -= 1
        onsets.append(on)
        prev = u
    # the low-pass smears the flat foot of each beat; re-centre on the sharper copy
    half_win = max(2, int(0.1 * period))
    refined = []
    for i, (on, u) in enumerate(zip(onsets, ups)):
        lo = max(refined[-1] + 1 if refined else 0, on - half_win)
        hi = min(u, on + half_win)
        refined.append(lo + int(np.argmin(xp[lo:hi + 1])) if hi >= lo else on)
    onsets = refined
    beats = []
    for k in range(len(ups) - 1):
        on, end = onsets[k], onsets[k + 1]
        if on == 0 or end <= on:
            continue  # truncated at the leading edge
        length = end - on
        if not min_gap <= length <= max_gap:
            continue
        u = ups[k]
        half = on + length // 2
        if half <= u:
            continue
        sys = u + int(np.argmax(xs[u:half + 1]))
        # re-centre on the less biased copy
        k = max(2, int(0.1 * length))
        lo, hi = max(on + 1, sys - k), min(end - 1, sys + k)
        sys = lo + int(np.argmax(xp[lo:hi + 1]))
        if not on < sys < end:
            continue
        beats.append(BeatMarkers(on, sys, end))
    if not beats:
        raise NoBeatsError("no complete beats")
    return beats


def detect_notch(values, beat: BeatMarkers, fs: float = 125.0, smoothed=None) -> int | None:
    """First local minimum between sys + 10% and end - 10% of the beat.

    A minimum only counts if the signal rises again by at least
    ``NOTCH_MIN_RISE`` of the beat amplitude before the search span closes;
    this keeps noise ripple on a monotone tail from being reported as a notch.
    ``smoothed`` lets callers pass the low-passed copy once per segment.
    """
    xs = _smooth(np.asarray(values, dtype=np.float64), fs) if smoothed is None else smoothed
    lo = beat.sys + int(np.ceil(0.1 * beat.length))
    hi = beat.end - int(np.ceil(0.1 * beat.length))
    if hi - lo < 3:
        return None
    amp = xs[beat.sys] - xs[beat.onset:beat.end].min()
    seg = xs[lo:hi]
    for i in range(1, seg.size - 1):
        if seg[i] < seg[i - 1] and seg[i] <= seg[i + 1]:
            if seg[i + 1:].max() - seg[i] >= NOTCH_MIN_RISE * amp:
                # re-centre on the sharper copy, as for the systolic peak
                n = lo + i
                xp = _peak_smooth(np.asarray(values, dtype=np.float64), fs)
                k = max(1, int(0.05 * beat.length))
                a, b = max(beat.sys + 1, n - k), min(beat.end - 1, n + k)
                return a + int(np.argmin(xp[a:b + 1]))
    return None


def positive_shift(beat_values) -> np.ndarray:
    """Shift a beat so its minimum sits slightly above zero."""
    v = np.asarray(beat_values, dtype=np.float64)
    return v - v.min() + SHIFT_EPS_REL * max(np.ptp(v), 1e-12)


def svri(values, beat: BeatMarkers) -> float:
    """Mean over [sys, end) divided by mean over [onset, sys)."""
    x = np.asarray(values, dtype=np.float64)
    pre = x[beat.onset:beat.sys].mean()
    if pre == 0:
        raise ZeroDivisionError("zero pre-systolic mean")
    return float(x[beat.sys:beat.end].mean() / pre)


def ipa(values, beat: BeatMarkers, notch: int) -> float:
    """Trapezoidal area up to the notch over the area after it.

    The two parts tile [onset, end]: the next beat's onset sample closes the
    diastolic area when it lies inside the segment.
    """
    x = np.asarray(values, dtype=np.float64)
    if not beat.onset < notch < beat.end:
        raise ValueError("notch outside beat")
    before = _trapezoid(x[beat.onset:notch + 1])
    after = _trapezoid(x[notch:beat.end + 1])
    if after == 0:
        raise ZeroDivisionError("zero diastolic area")
    return float(before / after)


def sqi(values, fs: float = 125.0) -> float:
    """Mean skewness over consecutive full 5 s windows (biased moments)."""
    x = np.asarray(values, dtype=np.float64)
    win = int(round(SQI_WINDOW_S * fs))
    n_win = x.size // win
    if n_win < 1:
        raise ValueError("segment shorter than one SQI window")
    w = x[:n_win * win].reshape(n_win, win)
    c = w - w.mean(axis=1, keepdims=True)
    m2 = (c ** 2).mean(axis=1)
    m3 = (c ** 3).mean(axis=1)
    if np.any(m2 <= 0):
        raise ZeroDivisionError("zero second moment in an SQI window")
    return float(np.mean(m3 / m2 ** 1.5))


def segment_morphology(values, fs: float = 125.0) -> MorphologyLabels:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2 * fs:
        raise NoBeatsError("segment shorter than 2 s")
    xs = _smooth(x, fs)
    beats = detect_beats(x, fs, xs)
    svris, ipas = [], []
    n_notch = 0
    for beat in beats:
        notch = detect_notch(x, beat, fs, xs)
        local = BeatMarkers(0, beat.sys - beat.onset, beat.length)
        v = positive_shift(x[beat.onset:beat.end])
        svris.append(svri(v, local))
        if notch is not None:
            n_notch += 1
            ipas.append(ipa(v, local, notch - beat.onset))
    ipa_val = float(np.mean(ipas)) if n_notch * 2 >= len(beats) else None
    return MorphologyLabels(float(np.mean(svris)), ipa_val, sqi(x, fs), None, len(beats))


def try_segment_morphology(values, fs: float = 125.0) -> MorphologyLabels | None:
    try:
        return segment_morphology(values, fs)
    except (NoBeatsError, ZeroDivisionError):
        return None


# ---------------------------------------------------------------------------
# sVRI binning
# ---------------------------------------------------------------------------

def fit_bins(svri_values, b: int = 8) -> BinEdges:
    v = np.asarray(svri_values, dtype=np.float64)
    if np.unique(v).size < b:
        raise ValueError(f"need at least {b} distinct values to fit {b} bins")
    edges = np.quantile(v, np.arange(1, b) / b)
    return BinEdges(tuple(float(e) for e in edges))


def assign_bin(v, edges: BinEdges):
    """Bin index in [0, b-1]; values beyond the outer edges fall in the end bins."""
    idx = np.searchsorted(np.asarray(edges.edges), v, side="right")
    return int(idx) if np.ndim(idx) == 0 else idx.astype(int)


# ---------------------------------------------------------------------------
# permutation test
# ---------------------------------------------------------------------------

_STATS = {
    "mean_diff": lambda a, b: np.mean(a, axis=-1) - np.mean(b, axis=-1),
    "median_diff": lambda a, b: np.median(a, axis=-1) - np.median(b, axis=-1),
}


def permutation_test(group_a, group_b, stat: str = "mean_diff", n_perm: int = 1000,
                     seed=None, exhaustive: bool = False) -> float:
    """Two-sided label-permutation p-value.

    Random mode returns (1 + #{|perm stat| >= |obs|}) / (n_perm + 1).  With
    ``exhaustive=True`` every split of the pooled sample is enumerated and the
    exact fraction (identity split included) is returned.
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both groups must be nonempty")
    fn = _STATS[stat]
    obs = abs(fn(a, b))
    pooled = np.concatenate([a, b])
    n_a = a.size
    # tolerance so float noise in the statistic does not break ties
    tol = 1e-12 * max(1.0, abs(obs))
    if exhaustive:
        idx = np.arange(pooled.size)
        combos = np.array(list(itertools.combinations(idx, n_a)))
        mask = np.zeros((len(combos), pooled.size), dtype=bool)
        mask[np.arange(len(combos))[:, None], combos] = True
        pa = np.stack([pooled[m] for m in mask])
        pb = np.stack([pooled[~m] for m in mask])
        stats = np.abs(fn(pa, pb))
        return float(np.mean(stats >= obs - tol))
    rng = np.random.default_rng(seed)
    perms = np.stack([rng.permutation(pooled) for _ in range(n_perm)])
    stats = np.abs(fn(perms[:, :n_a], perms[:, n_a:]))
    return float((1 + np.sum(stats >= obs - tol)) / (n_perm + 1))


# ---------------------------------------------------------------------------
# per-corpus label tables
# ---------------------------------------------------------------------------

@dataclass
class LabelTable:
    """Column-wise morphology labels for a segment store.

    Missing values: ``ipa`` is NaN when notches are too rare, ``svri`` and
    ``sqi`` are NaN and ``svri_bin`` is -1 when no beat was found.
    """

    svri: np.ndarray
    ipa: np.ndarray
    sqi: np.ndarray
    svri_bin: np.ndarray
    n_beats: np.ndarray

    def __len__(self):
        return len(self.svri)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.svri)


def label_segments(segments, fs: float = 125.0, edges: BinEdges | None = None, b: int = 8):
    """Label every segment; fit sVRI bins on the labelled ones unless ``edges`` is given.

    Returns ``(table, edges)``.
    """
    rows = [try_segment_morphology(s, fs) for s in segments]
    n = len(rows)
    svri_v = np.full(n, np.nan)
    ipa_v = np.full(n, np.nan)
    sqi_v = np.full(n, np.nan)
    beats = np.zeros(n, dtype=int)
    for i, r in enumerate(rows):
        if r is None:
            continue
        svri_v[i], sqi_v[i], beats[i] = r.svri, r.sqi, r.n_beats
        if r.ipa is not None:
            ipa_v[i] = r.ipa
    ok = np.isfinite(svri_v)
    if edges is None:
        edges = fit_bins(svri_v[ok], b)
    bins = np.full(n, -1, dtype=int)
    if ok.any():
        bins[ok] = assign_bin(svri_v[ok], edges)
    return LabelTable(svri_v, ipa_v, sqi_v, bins, beats), edges


LABEL_COLUMNS = ("index", "subject_id", "svri", "ipa", "sqi", "svri_bin", "n_beats")


def write_labels(path, table: LabelTable, subject_ids, edges: BinEdges):
    """CSV with one row per segment; bin edges go in a leading comment line."""
    with open(path, "w", newline="") as f:
        f.write("# svri_edges=" + ",".join(repr(e) for e in edges.edges) + "\n")
        w = csv.writer(f)
        w.writerow(LABEL_COLUMNS)
        for i in range(len(table)):
            w.writerow([i, subject_ids[i], repr(float(table.svri[i])), repr(float(table.ipa[i])),
                        repr(float(table.sqi[i])), int(table.svri_bin[i]), int(table.n_beats[i])])


def read_labels(path):
    """Inverse of :func:`write_labels`; returns ``(table, subject_ids, edges)``."""
    with open(path, newline="") as f:
        first = f.readline()
        if not first.startswith("# svri_edges="):
            raise ValueError(f"{path}: missing svri_edges header")
        raw = first.strip().split("=", 1)[1]
        edges = BinEdges(tuple(float(v) for v in raw.split(",") if v))
        reader = csv.DictReader(f)
        rows = list(reader)
    if reader.fieldnames is None or tuple(reader.fieldnames) != LABEL_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    col = lambda k, t: np.array([t(r[k]) for r in rows])  # noqa: E731
    table = LabelTable(col("svri", float), col("ipa", float), col("sqi", float),
                       col("svri_bin", int), col("n_beats", int))
    return table, [r["subject_id"] for r in rows], edges

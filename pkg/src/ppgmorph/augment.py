"""Stochastic time-series augmentations for the two pre-training modes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ORDER = ("crop", "gaussian_noise", "time_flip", "negate", "magnitude_scale")
MORPHOLOGY_SAFE = frozenset({"crop", "gaussian_noise"})


@dataclass(frozen=True)
class Transform:
    probability: float = 0.0
    low: float = 1.0
    high: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.low > self.high:
            raise ValueError("intensity range is inverted")


@dataclass(frozen=True)
class AugmentConfig:
    mode: str = "P"
    crop: Transform = field(default_factory=lambda: Transform(0.50, 0.5, 1.0))
    gaussian_noise: Transform = field(default_factory=lambda: Transform(0.0, 0.01, 0.1))
    time_flip: Transform = field(default_factory=lambda: Transform(0.20))
    negate: Transform = field(default_factory=lambda: Transform(0.20))
    magnitude_scale: Transform = field(default_factory=lambda: Transform(0.40, 0.66, 1.5))

    def __post_init__(self):
        if self.mode not in ("P", "S"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        if self.mode == "S":
            for name in ORDER:
                if name not in MORPHOLOGY_SAFE and getattr(self, name).probability > 0:
                    raise ValueError(f"S-mode must not enable {name}")
        if not 0 < self.crop.low <= self.crop.high <= 1:
            raise ValueError("crop keep fraction must lie in (0, 1]")
        if self.gaussian_noise.low < 0:
            raise ValueError("noise sigma must be nonnegative")

    @classmethod
    def for_mode(cls, mode: str) -> "AugmentConfig":
        if mode.upper() == "P":
            return cls()
        return cls(mode="S",
                   crop=Transform(0.25, 0.5, 1.0),
                   gaussian_noise=Transform(0.25, 0.01, 0.1),
                   time_flip=Transform(0.0),
                   negate=Transform(0.0),
                   magnitude_scale=Transform(0.0, 0.66, 1.5))

    def with_probabilities(self, **probs) -> "AugmentConfig":
        updates = {k: replace(getattr(self, k), probability=v) for k, v in probs.items()}
        return replace(self, **updates)


def random_crop(x, keep_range=(0.5, 1.0), rng=None) -> np.ndarray:
    """Crop a contiguous window and stretch it back to the input length.

    The stretch is a linear interpolation: it only ever upsamples, so there
    is nothing to anti-alias, and it avoids designing a new polyphase filter
    for every random crop length.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    keep = rng.uniform(*keep_range) if keep_range[0] < keep_range[1] else keep_range[0]
    n_keep = max(2, int(round(keep * x.size)))
    if n_keep >= x.size:
        return x.copy()
    start = int(rng.integers(0, x.size - n_keep + 1))
    pos = np.linspace(0.0, n_keep - 1, x.size)
    return np.interp(pos, np.arange(n_keep), x[start:start + n_keep])


def gaussian_noise(x, sigma_range=(0.01, 0.1), rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    sigma = rng.uniform(*sigma_range) if sigma_range[0] < sigma_range[1] else sigma_range[0]
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, x.size)


def time_flip(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)[::-1].copy()


def negate(x) -> np.ndarray:
    return -np.asarray(x, dtype=np.float64)


def magnitude_scale(x, scale_range=(0.66, 1.5), rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return np.asarray(x, dtype=np.float64) * rng.uniform(*scale_range)


def apply_pipeline(x, config: AugmentConfig, rng) -> np.ndarray:
    """Apply each enabled transform independently with its probability.

    Every transform consumes one uniform draw for the coin flip whether or not
    it fires, so a given seed walks the same random stream across configs.
    """
    rng = np.random.default_rng(rng)
    y = np.asarray(x, dtype=np.float64).copy()
    for name in ORDER:
        t = getattr(config, name)
        fire = rng.uniform() < t.probability
        if not fire:
            continue
        if name == "crop":
            y = random_crop(y, (t.low, t.high), rng)
        elif name == "gaussian_noise":
            y = gaussian_noise(y, (t.low, t.high), rng)
        elif name == "time_flip":
            y = time_flip(y)
        elif name == "negate":
            y = negate(y)
        else:
            y = magnitude_scale(y, (t.low, t.high), rng)
    return y

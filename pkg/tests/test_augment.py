import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ppgmorph.augment import (AugmentConfig, Transform, apply_pipeline, gaussian_noise, magnitude_scale,
                              negate, random_crop, time_flip)

signals = arrays(np.float64, st.integers(4, 200), elements=st.floats(-100, 100))


def test_crop_identity_at_full_keep():
    x = np.arange(50.0)
    np.testing.assert_array_equal(random_crop(x, (1.0, 1.0), 0), x)


@given(signals, st.integers(0, 2**31))
def test_crop_length_and_determinism(x, seed):
    a = random_crop(x, (0.5, 1.0), seed)
    assert a.size == x.size
    np.testing.assert_array_equal(a, random_crop(x, (0.5, 1.0), seed))


def test_crop_is_stretched_window():
    x = np.arange(100.0)
    y = random_crop(x, (0.5, 0.5), 3)
    # a linear ramp stays linear; endpoints are the window edges
    assert np.allclose(np.diff(y, 2), 0, atol=1e-9)
    assert y[-1] - y[0] == pytest.approx(49)


@given(signals)
def test_simple_transforms(x):
    np.testing.assert_array_equal(negate(negate(x)), x)
    assert sorted(time_flip(x)) == sorted(x)
    np.testing.assert_array_equal(gaussian_noise(x, (0.0, 0.0), 1), x)
    np.testing.assert_allclose(magnitude_scale(x, (2.0, 2.0), 1), 2 * x)


def test_pipeline_all_off_identity():
    cfg = AugmentConfig().with_probabilities(crop=0, time_flip=0, negate=0, magnitude_scale=0)
    x = np.random.default_rng(0).normal(size=300)
    np.testing.assert_array_equal(apply_pipeline(x, cfg, 1), x)


def test_mode_defaults():
    p = AugmentConfig.for_mode("P")
    assert (p.crop.probability, p.negate.probability, p.time_flip.probability,
            p.magnitude_scale.probability, p.gaussian_noise.probability) == (0.5, 0.2, 0.2, 0.4, 0.0)
    s = AugmentConfig.for_mode("S")
    assert (s.crop.probability, s.gaussian_noise.probability) == (0.25, 0.25)
    assert s.negate.probability == s.time_flip.probability == s.magnitude_scale.probability == 0


def test_s_mode_rejects_shape_changing_transforms():
    with pytest.raises(ValueError):
        AugmentConfig(mode="S", negate=Transform(0.1))
    with pytest.raises(ValueError):
        Transform(1.5)


def test_pipeline_firing_rates():
    cfg = AugmentConfig().with_probabilities(crop=0, time_flip=0, magnitude_scale=0, negate=0.2)
    rng = np.random.default_rng(0)
    x = np.arange(1.0, 11.0)
    fired = np.mean([apply_pipeline(x, cfg, rng)[0] < 0 for _ in range(4000)])
    assert abs(fired - 0.2) < 0.02

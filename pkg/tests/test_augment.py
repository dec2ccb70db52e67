from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avts.augment import (
    AugmentConfig,
    OUProcessParams,
    augment_pair,
    crop_width,
    ou_path,
    perturb_visual,
    span_mask,
)
from avts.datamodel import FeatureSequence


def _vis(n=50, d=8, seed=0):
    return FeatureSequence(np.random.default_rng(seed).normal(size=(n, d)) + 3.0, 25.0, "visual")


# --------------------------------------------------------------------- span masking


def test_mask_rate_zero_and_one(rng):
    seq = _vis()
    assert span_mask(seq, 0.0, 10, rng) == seq
    assert not span_mask(seq, 1.0, 10, rng).data.any()


def test_mask_fraction_bounds(rng):
    seq = FeatureSequence(np.ones((1000, 2)), 12.5, "acoustic")
    for _ in range(20):
        frac = 1.0 - span_mask(seq, 0.3, 10, rng).data[:, 0].mean()
        assert 0.3 <= frac <= 0.3 + 10 / 1000


def test_mask_returns_copy(rng):
    seq = _vis()
    before = seq.data.copy()
    span_mask(seq, 0.5, 5, rng)
    assert np.array_equal(seq.data, before)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.floats(0, 1), st.integers(1, 20), st.integers(0, 2**31))
def test_mask_spans_respect_target_and_limits(n, rate, max_span, seed):
    seq = FeatureSequence(np.ones((n, 1)), 12.5, "acoustic")
    out = span_mask(seq, rate, max_span, np.random.default_rng(seed))
    masked = out.data[:, 0] == 0
    target = int(np.ceil(rate * n))
    assert masked.sum() >= target
    # overshoot is bounded by the last span
    assert masked.sum() < target + max_span or target == 0 and masked.sum() == 0
    assert out.frames == n


def test_mask_invalid_rate(rng):
    with pytest.raises(ValueError):
        span_mask(_vis(), 1.5, 10, rng)


# --------------------------------------------------------------------- OU process


def test_ou_fixed_point():
    p = OUProcessParams(theta=1.0, mu=0.3, sigma=0.0, initial=-0.8)
    b = ou_path(p, 20, np.random.default_rng(0))
    assert b[0] == -0.8 and np.allclose(b[1:], 0.3, rtol=0, atol=1e-12)


def test_ou_mean_converges_geometrically():
    theta, mu, b0 = 0.2, 0.4, -0.6
    p = OUProcessParams(theta=theta, mu=mu, sigma=0.05, initial=b0, clip=(-10, 10))
    rng = np.random.default_rng(1)
    paths = np.stack([ou_path(p, 15, rng) for _ in range(10_000)])
    expected = mu + (b0 - mu) * (1 - theta) ** np.arange(15)
    assert np.allclose(paths.mean(0), expected, atol=3e-3)


def test_ou_stationary_variance():
    theta, sigma = 0.1, 0.05
    p = OUProcessParams(theta=theta, mu=0.0, sigma=sigma, clip=(-10, 10))
    b = ou_path(p, 100_000 + 500, np.random.default_rng(2))[500:]
    expected = sigma**2 / (1 - (1 - theta) ** 2)
    assert abs(b.var() / expected - 1) < 0.1


@pytest.mark.parametrize(
    "bad", [dict(theta=1.5), dict(theta=-0.1), dict(sigma=-1.0), dict(clip=(1.0, -1.0))]
)
def test_ou_invalid(bad):
    with pytest.raises(ValueError):
        ou_path(OUProcessParams(**bad), 5, np.random.default_rng(0))


# --------------------------------------------------------------------- visual perturbations


def test_zero_strength_is_identity(rng):
    seq = _vis()
    out = perturb_visual(seq, OUProcessParams(), 0.0, (0.0, 0.0), False, rng)
    assert out == seq


def test_brightness_adds_same_offset_to_every_dim(rng):
    seq = _vis()
    out = perturb_visual(seq, OUProcessParams(theta=0.1, sigma=0.1), 0.0, (0.0, 0.0), False, rng)
    diff = out.data - seq.data
    assert np.allclose(diff, diff[:, :1], atol=1e-5)
    assert np.abs(diff).max() > 0


def test_rotation_preserves_pair_norms(rng):
    seq = _vis(d=6)
    out = perturb_visual(seq, OUProcessParams(), 0.3, (0.0, 0.0), False, rng)
    pn = lambda x: np.hypot(x[:, 0::2], x[:, 1::2])
    assert np.allclose(pn(out.data), pn(seq.data), atol=1e-4)
    assert not np.allclose(out.data, seq.data)


def test_blur_smooths_in_time(rng):
    seq = _vis(n=200)
    out = perturb_visual(seq, OUProcessParams(), 0.0, (2.0, 2.0), False, rng)
    assert np.diff(out.data, axis=0).std() < 0.5 * np.diff(seq.data, axis=0).std()
    assert np.allclose(out.data.mean(0), seq.data.mean(0), atol=0.1)


def test_crop_width_and_contiguity(rng):
    assert crop_width(96) == 88
    seq = FeatureSequence(np.tile(np.arange(96.0), (5, 1)), 25.0, "visual")
    out = perturb_visual(seq, OUProcessParams(), 0.0, (0.0, 0.0), True, rng)
    assert out.dim == 88
    assert np.all(np.diff(out.data[0]) == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(2, 20), st.booleans(), st.integers(0, 1000))
def test_augmentations_preserve_frame_count(n, d, crop, seed):
    seq = FeatureSequence(np.random.default_rng(seed).normal(size=(n, d)), 25.0, "visual")
    out = perturb_visual(seq, OUProcessParams(theta=0.2, sigma=0.1), 0.1, (0.5, 1.5), crop, np.random.default_rng(seed))
    assert out.frames == n and out.dim == (crop_width(d) if crop else d)


def test_perturb_rejects_acoustic(rng):
    with pytest.raises(ValueError):
        perturb_visual(FeatureSequence(np.zeros((3, 2)), 12.5, "acoustic"), OUProcessParams(), 0, (0, 0), False, rng)


def test_augment_pair_keeps_alignment(rng):
    a = FeatureSequence(np.ones((40, 3)), 12.5, "acoustic")
    v = _vis(n=80)
    cfg = AugmentConfig.from_dict({"mask_rate": 0.2, "max_span": 4, "brightness": {"theta": 0.1, "sigma": 0.05}})
    a2, v2 = augment_pair(a, v, cfg, rng)
    assert a2.frames == 40 and v2.frames == 80

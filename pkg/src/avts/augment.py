"""Training-time perturbations on feature sequences.

The lip-video transforms (crop, blur, rotation, brightness drift) are applied
to dense visual feature vectors: crop selects a contiguous block of feature
dims, blur smooths along time, rotation mixes neighbouring dim pairs with a
per-frame Givens rotation and brightness adds a mean-reverting scalar offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .datamodel.types import FeatureSequence

CROP_RATIO = 88 / 96


@dataclass
class OUProcessParams:
    theta: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    clip: tuple[float, float] = (-1.0, 1.0)
    initial: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.clip[0] < self.clip[1]:
            raise ValueError("clip must satisfy lo < hi")


@dataclass
class AugmentConfig:
    mask_rate: float = 0.1
    max_span: int = 10
    brightness: OUProcessParams = field(default_factory=OUProcessParams)
    rotation_std: float = 0.0
    blur_sigma_range: tuple[float, float] = (0.0, 0.0)
    crop: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> AugmentConfig:
        d = dict(d)
        if "brightness" in d:
            b = dict(d["brightness"])
            if "clip" in b:
                b["clip"] = tuple(b["clip"])
            d["brightness"] = OUProcessParams(**b)
        if "blur_sigma_range" in d:
            d["blur_sigma_range"] = tuple(d["blur_sigma_range"])
        return cls(**d)


def span_mask(seq: FeatureSequence, mask_rate: float, max_span: int, rng: np.random.Generator) -> FeatureSequence:
    """Zero random non-overlapping spans until ``mask_rate`` of the frames are
    masked or no free span is left."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError("mask_rate must lie in [0, 1]")
    if max_span < 1:
        raise ValueError("max_span must be >= 1")
    data = seq.data.copy()
    n = seq.frames
    target = int(np.ceil(mask_rate * n))
    masked = np.zeros(n, dtype=bool)
    count = 0
    while count < target:
        free = np.flatnonzero(~masked)
        if free.size == 0:
            break
        length = int(rng.integers(1, max_span + 1))
        start = int(free[rng.integers(free.size)])
        # grow only into unmasked frames so spans never overlap
        stop = start
        while stop < n and stop - start < length and not masked[stop]:
            stop += 1
        masked[start:stop] = True
        count += stop - start
    data[masked] = 0.0
    return seq.with_data(data)


def ou_path(params: OUProcessParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Mean-reverting path ``b[t+1] = b[t] + theta (mu - b[t]) + sigma eps[t]``,
    clipped on output."""
    params.validate()
    b = np.empty(n)
    state = params.initial
    eps = rng.standard_normal(n)
    for t in range(n):
        b[t] = state
        state = state + params.theta * (params.mu - state) + params.sigma * eps[t]
    return np.clip(b, *params.clip)


def _rotate_pairs(data: np.ndarray, angles: np.ndarray) -> np.ndarray:
    out = data.copy()
    half = data.shape[1] // 2
    if half == 0:
        return out
    c, s = np.cos(angles)[:, None], np.sin(angles)[:, None]
    x, y = data[:, 0 : 2 * half : 2], data[:, 1 : 2 * half : 2]
    out[:, 0 : 2 * half : 2] = c * x - s * y
    out[:, 1 : 2 * half : 2] = s * x + c * y
    return out


def crop_width(dim: int) -> int:
    return max(1, int(round(dim * CROP_RATIO)))


def perturb_visual(
    seq: FeatureSequence,
    brightness: OUProcessParams,
    rotation_std: float,
    blur_sigma_range: tuple[float, float],
    crop: bool,
    rng: np.random.Generator,
) -> FeatureSequence:
    if seq.kind != "visual":
        raise ValueError("perturb_visual expects visual features")
    if rotation_std < 0 or blur_sigma_range[0] < 0 or blur_sigma_range[0] > blur_sigma_range[1]:
        raise ValueError("invalid augmentation strengths")
    brightness.validate()
    data = seq.data.astype(np.float64)
    if crop:
        width = crop_width(seq.dim)
        off = int(rng.integers(0, seq.dim - width + 1))
        data = data[:, off : off + width]
    sigma = float(rng.uniform(*blur_sigma_range)) if blur_sigma_range[1] > 0 else 0.0
    if sigma > 0 and data.shape[0] > 0:
        data = gaussian_filter1d(data, sigma, axis=0, mode="nearest")
    if rotation_std > 0:
        data = _rotate_pairs(data, rng.normal(0.0, rotation_std, size=data.shape[0]))
    if brightness.sigma > 0 or brightness.mu != 0 or brightness.initial != 0:
        data = data + ou_path(brightness, data.shape[0], rng)[:, None]
    return seq.with_data(data)


def augment_pair(
    audio: FeatureSequence, video: FeatureSequence, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[FeatureSequence, FeatureSequence]:
    if cfg.mask_rate > 0:
        audio = span_mask(audio, cfg.mask_rate, cfg.max_span, rng)
        video = span_mask(video, cfg.mask_rate, 2 * cfg.max_span, rng)
    video = perturb_visual(video, cfg.brightness, cfg.rotation_std, cfg.blur_sigma_range, cfg.crop, rng)
    return audio, video

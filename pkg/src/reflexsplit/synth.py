"""Screen-blend synthesis of mixed images and per-epoch source sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

GAMMA1_RANGE = (0.8, 1.0)
GAMMA2_RANGE = (0.4, 1.0)
ORIGINS = ("synthetic", "real", "nature")


@dataclass(frozen=True)
class BlendCoefficients:
    gamma1: float
    gamma2: float

    def __post_init__(self):
        if not GAMMA1_RANGE[0] <= self.gamma1 <= GAMMA1_RANGE[1]:
            raise ValueError(f"gamma1={self.gamma1} outside {GAMMA1_RANGE}")
        if not GAMMA2_RANGE[0] <= self.gamma2 <= GAMMA2_RANGE[1]:
            raise ValueError(f"gamma2={self.gamma2} outside {GAMMA2_RANGE}")


@dataclass(frozen=True)
class TrainingTriplet:
    mixed: np.ndarray
    transmission: np.ndarray
    reflection: np.ndarray
    origin: str = "synthetic"

    def __post_init__(self):
        if not (self.mixed.shape == self.transmission.shape == self.reflection.shape):
            raise ValueError("triplet images must share dimensions")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")


@dataclass(frozen=True)
class EpochSampler:
    pairs_per_epoch: int = 5000
    ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    augment: bool = False
    reflection_blur: float = 0.0

    def __post_init__(self):
        if len(self.ratio) != 3 or any(p < 0 for p in self.ratio):
            raise ValueError("ratio needs three non-negative proportions")
        if abs(sum(self.ratio) - 1.0) > 1e-9:
            raise ValueError(f"ratio {self.ratio} does not sum to 1")
        if self.pairs_per_epoch < 0:
            raise ValueError("pairs_per_epoch must be non-negative")


def screen_blend(t, r, coeffs: BlendCoefficients):
    """``g1*t + g2*r - g1*g2*t*r`` clamped to [0, 1].  Works on numpy arrays and tensors."""
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch: {tuple(t.shape)} vs {tuple(r.shape)}")
    g1, g2 = coeffs.gamma1, coeffs.gamma2
    return (g1 * t + g2 * r - g1 * g2 * (t * r)).clip(0.0, 1.0)


def sample_coefficients(rng: np.random.Generator) -> BlendCoefficients:
    return BlendCoefficients(float(rng.uniform(*GAMMA1_RANGE)), float(rng.uniform(*GAMMA2_RANGE)))


def apportion(total: int, ratio: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``total``; ties go to the earlier entry."""
    quotas = [total * p for p in ratio]
    counts = [math.floor(q) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _triplet_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def _augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < 0.5:
        img = img[:, ::-1]
    if rng.random() < 0.5:
        img = img[::-1]
    return np.ascontiguousarray(img)


def blend_pair(t: np.ndarray, r: np.ndarray, rng: np.random.Generator,
               augment: bool = False, reflection_blur: float = 0.0) -> TrainingTriplet:
    if augment:
        t, r = _augment(t, rng), _augment(r, rng)
    if reflection_blur > 0:
        r = gaussian_filter(r, sigma=(reflection_blur, reflection_blur, 0))
    coeffs = sample_coefficients(rng)
    return TrainingTriplet(screen_blend(t, r, coeffs), t, r, "synthetic")


def build_epoch(sampler: EpochSampler, sources: dict, epoch: int = 0) -> list[TrainingTriplet]:
    """Draw one epoch of triplets.

    ``sources['synthetic']`` holds ``(T, R)`` pairs that are blended fresh
    every epoch; ``real`` and ``nature`` hold ready ``TrainingTriplet`` items.
    Each triplet draws from its own RNG stream keyed on (seed, epoch, index),
    so the result does not depend on evaluation order.
    """
    counts = apportion(sampler.pairs_per_epoch, sampler.ratio)
    out: list[TrainingTriplet] = []
    index = 0
    for origin, count in zip(ORIGINS, counts):
        if count == 0:
            continue
        pool = sources.get(origin) or []
        if not pool:
            raise ValueError(f"no {origin} source items but ratio requests {count}")
        for _ in range(count):
            rng = _triplet_rng(sampler.seed, epoch, index)
            item = pool[int(rng.integers(len(pool)))]
            if origin == "synthetic":
                t, r = item
                out.append(blend_pair(t, r, rng, sampler.augment, sampler.reflection_blur))
            else:
                out.append(TrainingTriplet(item.mixed, item.transmission, item.reflection, origin))
            index += 1
    return out


def procedural_image(rng: np.random.Generator, size: int, smooth: float = 4.0) -> np.ndarray:
    """Random smooth colour field with a few hard-edged rectangles; stands in for photos."""
    img = gaussian_filter(rng.random((size, size, 3)), sigma=(smooth, smooth, 0))
    img = (img - img.min()) / max(img.max() - img.min(), 1e-8)
    for _ in range(int(rng.integers(1, 4))):
        y0, x0 = rng.integers(0, size - 2, size=2)
        h, w = rng.integers(2, max(3, size // 2), size=2)
        img[y0:y0 + h, x0:x0 + w] = rng.random(3)
    return img.astype(np.float64)


def procedural_sources(count: int, size: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [(procedural_image(rng, size), procedural_image(rng, size, smooth=8.0))
            for _ in range(count)]

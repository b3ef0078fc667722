"""SpecAugment-style frequency and time masking of feature matrices (no time warping)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MaskRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    freq_mask_param: int = 8
    n_freq_masks: int = 2
    time_mask_param: int = 20
    n_time_masks: int = 2
    mask_value: float = 0.0

    def __post_init__(self):
        if min(self.freq_mask_param, self.n_freq_masks, self.time_mask_param, self.n_time_masks) < 0:
            raise ValueError("mask parameters and counts must be non-negative")


def freq_mask(features: np.ndarray, f0: int, f: int, mask_value: float = 0.0) -> np.ndarray:
    n = features.shape[1]
    if f0 < 0 or f < 0 or f0 + f > n:
        raise MaskRangeError(f"frequency band [{f0}, {f0 + f}) outside [0, {n})")
    out = features.copy()
    out[:, f0:f0 + f] = mask_value
    return out


def time_mask(features: np.ndarray, t0: int, t: int, mask_value: float = 0.0) -> np.ndarray:
    n = features.shape[0]
    if t0 < 0 or t < 0 or t0 + t > n:
        raise MaskRangeError(f"time span [{t0}, {t0 + t}) outside [0, {n})")
    out = features.copy()
    out[t0:t0 + t] = mask_value
    return out


def draw_masks(shape: tuple, cfg: AugmentConfig, rng: np.random.Generator) -> list:
    """Sample ``(axis, start, width)`` triples; axis 1 is frequency, axis 0 time.

    Widths are uniform on ``[0, min(param, axis length)]`` and starts uniform
    over the positions that keep the mask inside the axis.
    """
    masks = []
    for axis, param, count in ((1, cfg.freq_mask_param, cfg.n_freq_masks),
                               (0, cfg.time_mask_param, cfg.n_time_masks)):
        length = shape[axis]
        for _ in range(count):
            width = int(rng.integers(0, min(param, length) + 1))
            start = int(rng.integers(0, length - width + 1))
            masks.append((axis, start, width))
    return masks


def apply_specaugment(features: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    if not cfg.enabled:
        return features
    out = features
    for axis, start, width in draw_masks(features.shape, cfg, rng):
        if width == 0:
            continue
        fn = freq_mask if axis == 1 else time_mask
        out = fn(out, start, width, cfg.mask_value)
    return out

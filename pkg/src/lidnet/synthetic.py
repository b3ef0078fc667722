"""Generated tone corpora for smoke tests and overfitting checks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from lidnet.data import write_manifest
from lidnet.features import AudioClip, write_wav

# center frequencies (Hz) of the per-class tone bands
TONE_CENTERS = (300.0, 800.0, 1800.0, 3500.0, 5000.0, 6500.0)


def tone_clip(label: int, rng: np.random.Generator, duration: float = 0.5, sample_rate: int = 16000,
              noise: float = 0.02) -> AudioClip:
    """A few sinusoids scattered within +-10% of the class center, plus white noise."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    center = TONE_CENTERS[label]
    x = np.zeros(n)
    for _ in range(3):
        f = center * rng.uniform(0.9, 1.1)
        x += rng.uniform(0.05, 0.15) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    x += noise * rng.standard_normal(n)
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate)


def tone_dataset(n_clips: int, n_classes: int = 4, seed: int = 0, duration: float = 0.5) -> list:
    """``n_clips`` balanced ``(clip, label)`` pairs, labels cycling 0..n_classes-1."""
    if not 1 <= n_classes <= len(TONE_CENTERS):
        raise ValueError(f"n_classes must lie in [1, {len(TONE_CENTERS)}]")
    rng = np.random.default_rng(seed)
    return [(tone_clip(i % n_classes, rng, duration), i % n_classes) for i in range(n_clips)]


def write_tone_corpus(out_dir, codes, n_clips: int, seed: int = 0, duration: float = 0.5) -> Path:
    """Write WAVs plus a ``manifest.tsv`` labelled with ``codes``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (clip, label) in enumerate(tone_dataset(n_clips, len(codes), seed, duration)):
        name = f"clip{i:04d}.wav"
        write_wav(out / name, clip)
        rows.append((name, codes[label]))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest

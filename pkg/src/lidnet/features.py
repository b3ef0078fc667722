"""Log-mel (MFSC) front-end, WAV decoding and the LIDF feature file format."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct, rfft


class DecodeError(ValueError):
    pass


class FeatureConfigError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window: int = 400
    hop: int = 160
    fft_size: int = 512
    n_mels: int = 40
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-10
    pre_emphasis: float = 0.97
    normalize: bool = False

    def __post_init__(self):
        if not (0 < self.hop <= self.window <= self.fft_size):
            raise FeatureConfigError(
                f"need 0 < hop <= window <= fft_size, got hop={self.hop} "
                f"window={self.window} fft_size={self.fft_size}")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise FeatureConfigError(
                f"need 0 <= f_min < f_max <= sample_rate/2, got {self.f_min}, {self.f_max}")
        if self.n_mels < 1 or self.log_floor <= 0:
            raise FeatureConfigError("n_mels must be >= 1 and log_floor > 0")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int


@dataclass
class FeatureSequence:
    frames: np.ndarray  # [T, n_mels] float32
    valid: np.ndarray  # [T] bool

    @classmethod
    def full(cls, frames: np.ndarray) -> "FeatureSequence":
        frames = np.asarray(frames, dtype=np.float32)
        return cls(frames, np.ones(frames.shape[0], dtype=bool))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def read_wav(path, sample_rate: int = 16000) -> AudioClip:
    """Decode 16-bit little-endian mono PCM. No resampling is done."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise DecodeError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    except EOFError as exc:
        raise DecodeError(f"{path}: truncated header") from exc
    if channels != 1:
        raise DecodeError(f"{path}: channels={channels}, expected mono")
    if width != 2:
        raise DecodeError(f"{path}: sample width={8 * width} bits, expected 16")
    if rate != sample_rate:
        raise DecodeError(f"{path}: sample_rate={rate}, expected {sample_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def hann(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))


def num_frames(n_samples: int, cfg: FeatureConfig) -> int:
    return 1 + (n_samples - cfg.window) // cfg.hop


def frame_signal(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < cfg.window:
        raise TooShortError(f"clip has {x.size} samples, need at least {cfg.window}")
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - cfg.pre_emphasis * x[:-1]
    t = num_frames(x.size, cfg)
    idx = np.arange(cfg.window)[None, :] + cfg.hop * np.arange(t)[:, None]
    return y[idx] * hann(cfg.window)


def power_spectrum(frames: np.ndarray, fft_size: int) -> np.ndarray:
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise FeatureConfigError(f"fft_size must be a power of two, got {fft_size}")
    frames = np.atleast_2d(frames)
    if frames.shape[1] > fft_size:
        raise FeatureConfigError(f"frame length {frames.shape[1]} exceeds fft_size {fft_size}")
    spec = rfft(frames, n=fft_size, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig) -> np.ndarray:
    """Centers of the n_mels filters plus the two outer edges, in Hz."""
    mels = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    return mel_to_hz(mels)


def build_mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters on FFT bins, peaking at exactly 1 on their center bin."""
    n_bins = cfg.fft_size // 2 + 1
    edges = np.floor((cfg.fft_size + 1) * mel_center_frequencies(cfg) / cfg.sample_rate).astype(int)
    edges = np.minimum(edges, n_bins - 1)
    bank = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        if not lo < c < hi:
            raise FeatureConfigError(
                f"mel filter {m} has no support (bins {lo}, {c}, {hi}); "
                f"n_mels={cfg.n_mels} is too large for fft_size={cfg.fft_size}")
        k = np.arange(lo, hi + 1)
        bank[m, lo:hi + 1] = np.where(k <= c, (k - lo) / (c - lo), (hi - k) / (hi - c))
    return bank


def compute_mfsc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    if clip.sample_rate != cfg.sample_rate:
        raise DecodeError(f"sample_rate={clip.sample_rate}, expected {cfg.sample_rate}")
    energies = power_spectrum(frame_signal(clip, cfg), cfg.fft_size) @ build_mel_filterbank(cfg).T
    feats = np.log(np.maximum(energies, cfg.log_floor))
    if cfg.normalize:
        feats = standardize(feats)
    return FeatureSequence.full(feats)


def standardize(feats: np.ndarray) -> np.ndarray:
    """Per-utterance, per-coefficient zero mean and unit variance."""
    mu = feats.mean(axis=0, keepdims=True)
    sd = feats.std(axis=0, keepdims=True)
    return (feats - mu) / np.where(sd > 0, sd, 1.0)


def dct_mfcc(features: FeatureSequence, n_coeffs: int) -> FeatureSequence:
    n_mels = features.frames.shape[1]
    if not 1 <= n_coeffs <= n_mels:
        raise FeatureConfigError(f"n_coeffs must lie in [1, {n_mels}], got {n_coeffs}")
    c = dct(features.frames.astype(np.float64), type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureSequence(c.astype(np.float32), features.valid.copy())


def inverse_dct(features: FeatureSequence) -> FeatureSequence:
    x = idct(features.frames.astype(np.float64), type=2, norm="ortho", axis=1)
    return FeatureSequence(x.astype(np.float32), features.valid.copy())


# LIDF: "LIDF" | u32 version | u32 T | u32 n_mels | float32[T*n_mels], all little-endian
LIDF_MAGIC = b"LIDF"
LIDF_VERSION = 1
_LIDF_HEADER = struct.Struct("<4sIII")


def write_lidf(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise FeatureFormatError(f"expected a [T, n_mels] matrix, got shape {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(_LIDF_HEADER.pack(LIDF_MAGIC, LIDF_VERSION, *frames.shape))
        fh.write(frames.tobytes())


def read_lidf(path) -> FeatureSequence:
    blob = Path(path).read_bytes()
    if len(blob) < _LIDF_HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, t, n_mels = _LIDF_HEADER.unpack_from(blob)
    if magic != LIDF_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != LIDF_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    need = _LIDF_HEADER.size + 4 * t * n_mels
    if t < 1 or n_mels < 1 or len(blob) != need:
        raise FeatureFormatError(f"{path}: payload is {len(blob)} bytes, header implies {need}")
    data = np.frombuffer(blob, dtype="<f4", offset=_LIDF_HEADER.size).reshape(t, n_mels)
    return FeatureSequence.full(data.astype(np.float32))


def load_features(path, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    """Features from a ``.lidf`` file or a WAV run through the MFSC front-end."""
    if str(path).lower().endswith(".lidf"):
        seq = read_lidf(path)
        if seq.frames.shape[1] != cfg.n_mels:
            raise FeatureFormatError(f"{path}: has {seq.frames.shape[1]} coefficients, expected {cfg.n_mels}")
        return seq
    return compute_mfsc(read_wav(path, cfg.sample_rate), cfg)


"""Run configuration: a flat ``section.key = value`` text format with typed defaults.

Lines may also sit under ``[section]`` headers, in which case undotted keys
are prefixed with that section. ``#`` starts a comment line. Every key has a
default and unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from lidnet.augment import AugmentConfig
from lidnet.data import LANGUAGES, LabelSet
from lidnet.encoder import EncoderConfig
from lidnet.features import FeatureConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple:
    s = s.strip()
    return tuple(int(v) for v in s.split(",")) if s else ()


def _str_list(s: str) -> tuple:
    return tuple(v.strip() for v in s.split(",") if v.strip())


_PARSERS = {int: int, float: float, bool: _bool, str: str, "ints": _int_list, "strs": _str_list}

# key -> (type, default)
SCHEMA = {
    "features.sample_rate": (int, 16000),
    "features.window": (int, 400),
    "features.hop": (int, 160),
    "features.fft_size": (int, 512),
    "features.n_mels": (int, 40),
    "features.f_min": (float, 0.0),
    "features.f_max": (float, 8000.0),
    "features.log_floor": (float, 1e-10),
    "features.pre_emphasis": (float, 0.97),
    "features.normalize": (bool, False),
    "model.blocks": (int, 15),
    "model.subblocks": (int, 5),
    "model.channels": (int, 512),
    "model.attention_dim": (int, 256),
    "model.dropout": (float, 0.2),
    "model.kernel_schedule": ("ints", ()),  # empty: derived from model.blocks
    "model.separable": (bool, True),
    "augment.enabled": (bool, False),
    "augment.freq_mask_param": (int, 8),
    "augment.n_freq_masks": (int, 2),
    "augment.time_mask_param": (int, 20),
    "augment.n_time_masks": (int, 2),
    "augment.mask_value": (float, 0.0),
    "train.lr": (float, 0.005),
    "train.lr_min": (float, 0.0001),
    "train.total_steps": (int, 0),  # 0: max_epochs * steps_per_epoch
    "train.batch_size": (int, 32),
    "train.max_epochs": (int, 50),
    "train.patience": (int, 5),
    "train.min_delta": (float, 1e-3),
    "train.seed": (int, 0),
    "train.crop_frames": (int, 0),  # 0: train on full utterances
    "train.bucket_by_length": (bool, False),
    "train.workers": (int, 1),
    "data.train_manifest": (str, ""),
    "data.val_manifest": (str, ""),
    "data.labels": ("strs", tuple(r[0] for r in LANGUAGES)),
}


def _format(kind, value) -> str:
    if kind in ("ints", "strs"):
        return ",".join(str(v) for v in value)
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: Mapping

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: Mapping[str, str]) -> "RunConfig":
        vals = dict(self.values)
        for key, raw in overrides.items():
            vals[key] = parse_value(key, raw)
        return RunConfig(vals)

    def dumps(self) -> str:
        return "".join(f"{k}={_format(SCHEMA[k][0], self.values[k])}\n" for k in sorted(self.values))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    # typed views --------------------------------------------------------
    def features(self) -> FeatureConfig:
        v = self.values
        return FeatureConfig(
            sample_rate=v["features.sample_rate"], window=v["features.window"], hop=v["features.hop"],
            fft_size=v["features.fft_size"], n_mels=v["features.n_mels"], f_min=v["features.f_min"],
            f_max=v["features.f_max"], log_floor=v["features.log_floor"],
            pre_emphasis=v["features.pre_emphasis"], normalize=v["features.normalize"])

    def encoder(self) -> EncoderConfig:
        v = self.values
        return EncoderConfig(
            input_dim=v["features.n_mels"], blocks=v["model.blocks"], subblocks=v["model.subblocks"],
            channels=v["model.channels"], kernel_schedule=v["model.kernel_schedule"] or None,
            dropout_p=v["model.dropout"], separable=v["model.separable"])

    def augment(self) -> AugmentConfig:
        v = self.values
        return AugmentConfig(
            enabled=v["augment.enabled"], freq_mask_param=v["augment.freq_mask_param"],
            n_freq_masks=v["augment.n_freq_masks"], time_mask_param=v["augment.time_mask_param"],
            n_time_masks=v["augment.n_time_masks"], mask_value=v["augment.mask_value"])

    def labels(self) -> LabelSet:
        return LabelSet.from_codes(self.values["data.labels"])

    def validate(self) -> "RunConfig":
        """Build every typed view once so bad combinations fail before any work starts."""
        try:
            self.features()
            self.encoder()
            self.augment()
            self.labels()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.values["model.attention_dim"] < 1 or self.values["train.batch_size"] < 1:
            raise ConfigError("model.attention_dim and train.batch_size must be >= 1")
        if not 0 < self.values["train.lr_min"] <= self.values["train.lr"]:
            raise ConfigError("need 0 < train.lr_min <= train.lr")
        if self.values["train.max_epochs"] < 1 or self.values["train.patience"] < 0:
            raise ConfigError("train.max_epochs must be >= 1 and train.patience >= 0")
        return self


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    kind = SCHEMA[key][0]
    try:
        return _PARSERS[kind](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_text(text: str, origin: str = "<config>") -> dict:
    out, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            continue
        if "=" not in s:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {s!r}")
        key, raw = (p.strip() for p in s.split("=", 1))
        if "." not in key and section:
            key = f"{section}.{key}"
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        out[key] = raw
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    raw = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(parse_text(text, str(path)))
    raw.update(overrides or {})
    cfg = RunConfig.defaults().with_overrides(raw)
    base = Path(path).parent if path else None
    # manifest paths from a config file are relative to that file; all are made absolute
    vals = dict(cfg.values)
    for key in ("data.train_manifest", "data.val_manifest"):
        if vals[key]:
            p = Path(vals[key])
            if not p.is_absolute() and base is not None and key not in (overrides or {}):
                p = base / p
            vals[key] = str(p.resolve())
    return RunConfig(vals).validate()

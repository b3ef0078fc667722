"""SGD training with a cosine-annealed learning rate, early stopping and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from lidnet.augment import AugmentConfig, apply_specaugment
from lidnet.data import DataError
from lidnet.encoder import EVAL, TRAIN
from lidnet.model import LidModel, pad_batch, softmax_probs
from lidnet.tensor import ContractError, Parameter, cross_entropy

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


class CheckpointShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 0.005
    lr_min: float = 1e-4
    total_steps: int = 0  # 0: derived as max_epochs * steps_per_epoch
    batch_size: int = 32
    max_epochs: int = 50
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-3
    seed: int = 0
    crop_frames: int = 0
    bucket_by_length: bool = False

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ValueError(f"need 0 < lr_min <= lr_init, got {self.lr_min}, {self.lr_init}")
        if self.total_steps < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("total_steps >= 0, batch_size >= 1 and max_epochs >= 1 required")


def cosine_lr(step: int, lr_init: float = 0.005, lr_min: float = 1e-4, total_steps: int = 1) -> float:
    """Half-cosine decay from ``lr_init`` to ``lr_min`` over ``total_steps``, then flat."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    frac = min(max(step, 0), total_steps) / total_steps
    return lr_min + (lr_init - lr_min) * 0.5 * (1.0 + math.cos(math.pi * frac))


def sgd_step(params: Sequence[Parameter], grads: Mapping[str, np.ndarray], lr: float) -> None:
    """In-place ``p -= lr * g`` for every trainable parameter."""
    for p in params:
        if not p.trainable:
            continue
        if p.name not in grads:
            raise ContractError(f"no gradient for trainable parameter {p.name!r}")
        g = grads[p.name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {p.name!r} has shape {g.shape}, parameter {p.shape}")
        p.data -= (lr * g).astype(p.data.dtype)


def collect_grads(params: Sequence[Parameter]) -> dict:
    return {p.name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params if p.trainable}


@dataclass
class Utterance:
    features: np.ndarray  # [T, D] float32
    label: int
    source: str = ""


@dataclass
class HistoryRow:
    step: int
    lr: float
    train_loss: float
    epoch: int
    val_loss: Optional[float] = None


@dataclass
class EvalResult:
    loss: float
    predictions: list
    labels: list
    probabilities: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(np.mean(np.asarray(self.predictions) == np.asarray(self.labels)))


@dataclass
class TrainResult:
    history: list
    best_val_loss: float
    best_state: dict
    steps: int
    epochs: int
    val_losses: list = field(default_factory=list)
    rng_state: Optional[dict] = None


def _check_dataset(data: Sequence[Utterance], n_classes: int, name: str) -> None:
    if not data:
        raise DataError(f"{name} set is empty")
    for u in data:
        if not 0 <= u.label < n_classes:
            raise DataError(f"{name} set: {u.source or 'utterance'} has label index {u.label} "
                            f"outside [0, {n_classes})")


def snapshot(model: LidModel) -> dict:
    return {p.name: p.data.copy() for p in model.parameters()}


def restore(model: LidModel, state: Mapping[str, np.ndarray]) -> None:
    """Copy arrays into the model's parameters, checking names and shapes."""
    params = model.named()
    for name, p in params.items():
        if name not in state:
            raise CheckpointShapeError(f"checkpoint has no parameter {name!r}")
        arr = np.asarray(state[name])
        if arr.shape != p.shape:
            raise CheckpointShapeError(f"parameter {name!r}: checkpoint shape {arr.shape}, model shape {p.shape}")
    extra = set(state) - set(params)
    if extra:
        raise CheckpointShapeError(f"checkpoint parameter {sorted(extra)[0]!r} does not exist in the model")
    for name, p in params.items():
        p.data[...] = state[name]


def evaluate_model(model: LidModel, data: Sequence[Utterance], batch_size: int = 32) -> EvalResult:
    """Eval-mode pass: mean cross-entropy plus the argmax class of each utterance."""
    _check_dataset(data, model.n_classes, "evaluation")
    total, preds, probs = 0.0, [], []
    for i in range(0, len(data), batch_size):
        chunk = data[i:i + batch_size]
        x, valid = pad_batch([u.features for u in chunk])
        logits = model.forward(x, valid, EVAL)
        labels = [u.label for u in chunk]
        total += float(cross_entropy(logits, labels).data) * len(chunk)
        p = softmax_probs(logits.data)
        probs.append(p)
        preds.extend(int(k) for k in p.argmax(axis=1))
    return EvalResult(total / len(data), preds, [u.label for u in data], np.concatenate(probs))


def _batches(n: int, lengths: Sequence[int], cfg: TrainConfig, rng: np.random.Generator) -> list:
    order = rng.permutation(n)
    if cfg.bucket_by_length:
        order = order[np.argsort([lengths[i] for i in order], kind="stable")]
        chunks = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        return [chunks[i] for i in rng.permutation(len(chunks))]
    return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def _prepare(u: Utterance, cfg: TrainConfig, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    x = u.features
    if cfg.crop_frames and x.shape[0] > cfg.crop_frames:
        start = int(rng.integers(0, x.shape[0] - cfg.crop_frames + 1))
        x = x[start:start + cfg.crop_frames]
    return apply_specaugment(x, aug, rng)


def train_loop(model: LidModel, train: Sequence[Utterance], val: Sequence[Utterance], cfg: TrainConfig,
               aug: AugmentConfig = AugmentConfig(),
               on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Mini-batch SGD until validation loss plateaus or ``max_epochs`` is reached.

    The model is left holding the parameters of the best validation epoch.
    """
    _check_dataset(train, model.n_classes, "training")
    _check_dataset(val, model.n_classes, "validation")
    rng = np.random.default_rng([cfg.seed, 1])
    params = model.trainable()
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    horizon = cfg.total_steps or cfg.max_epochs * steps_per_epoch
    lengths = [u.features.shape[0] for u in train]

    history, val_losses = [], []
    best, best_state, bad, step, epoch = math.inf, snapshot(model), 0, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        for idx in _batches(len(train), lengths, cfg, rng):
            x, valid = pad_batch([_prepare(train[i], cfg, aug, rng) for i in idx])
            labels = [train[i].label for i in idx]
            lr = cosine_lr(step, cfg.lr_init, cfg.lr_min, horizon)
            model.zero_grad()
            loss = cross_entropy(model.forward(x, valid, TRAIN, rng), labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite training loss {value} at step {step} (epoch {epoch}, lr {lr:.6g})")
            loss.backward()
            sgd_step(params, collect_grads(params), lr)
            history.append(HistoryRow(step, lr, value, epoch))
            step += 1
        val_loss = evaluate_model(model, val, cfg.batch_size).loss
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss after epoch {epoch} (step {step})")
        history[-1].val_loss = val_loss
        val_losses.append(val_loss)
        log.info("epoch %d step %d train_loss %.4f val_loss %.4f", epoch, step, history[-1].train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, val_loss)
        if val_loss < best - cfg.plateau_min_delta:
            best, best_state, bad = val_loss, snapshot(model), 0
        else:
            bad += 1
            if bad >= cfg.plateau_patience:
                log.info("validation loss plateaued after %d epochs", epoch)
                break
    restore(model, best_state)
    return TrainResult(history, best, best_state, step, epoch, val_losses, rng.bit_generator.state)


def write_history_csv(path, history: Sequence[HistoryRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,train_loss,epoch,val_loss\n")
        for r in history:
            val = "" if r.val_loss is None else f"{r.val_loss:.6f}"
            fh.write(f"{r.step},{r.lr:.4f},{r.train_loss:.6f},{r.epoch},{val}\n")


# ---------------------------------------------------------------------------
# checkpoint file
#
#   "LIDC" u32 version=1 u32 n_params
#   n_params x { u16 name_len, name (utf-8), u8 rank, rank x u32 dims, float32 data }
#   u64 step, u32 text_len, text (utf-8 key=value lines)
# everything little-endian. Training state rides in the text under "state.*" keys.

CKPT_MAGIC = b"LIDC"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict  # name -> float32 array, in file order
    step: int = 0
    config: dict = field(default_factory=dict)  # key -> str
    rng_state: Optional[dict] = None
    best_val_loss: Optional[float] = None

    def text(self) -> str:
        kv = dict(self.config)
        if self.best_val_loss is not None:
            kv["state.best_val_loss"] = repr(float(self.best_val_loss))
        if self.rng_state is not None:
            kv["state.rng"] = json.dumps(self.rng_state, sort_keys=True, separators=(",", ":"))
        return "".join(f"{k}={kv[k]}\n" for k in sorted(kv))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    text = ckpt.text().encode("utf-8")
    out.append(struct.pack("<QI", ckpt.step, len(text)) + text)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.path}: truncated in {section}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, section: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "header") != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic in header")
    version, count = r.unpack("<II", "header")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    params = {}
    for i in range(count):
        (n,) = r.unpack("<H", f"parameter #{i} name")
        try:
            name = r.take(n, f"parameter #{i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"{path}: parameter #{i} name is not UTF-8") from None
        (rank,) = r.unpack("<B", f"parameter {name!r} rank")
        dims = r.unpack(f"<{rank}I", f"parameter {name!r} dims")
        size = int(np.prod(dims, dtype=np.int64))
        data = r.take(4 * size, f"parameter {name!r} data")
        params[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    step, tlen = r.unpack("<QI", "footer")
    try:
        text = r.take(tlen, "footer").decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointFormatError(f"{path}: footer text is not UTF-8") from None
    if r.pos != len(r.blob):
        raise CheckpointFormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes after footer")
    config, rng_state, best = {}, None, None
    for line in text.splitlines():
        key, _, value = line.partition("=")
        if key == "state.rng":
            rng_state = json.loads(value)
        elif key == "state.best_val_loss":
            best = float(value)
        else:
            config[key] = value
    return Checkpoint(params, step, config, rng_state, best)

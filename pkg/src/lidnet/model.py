"""The complete language-ID network: encoder, attentive pooling, classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from lidnet.encoder import EVAL, Encoder, EncoderConfig, encoder_forward
from lidnet.sap import ClassifierParams, SapParams, classify, sap_forward
from lidnet.tensor import Parameter, Tensor


@dataclass
class LidModel:
    encoder: Encoder
    sap: SapParams
    classifier: ClassifierParams

    @classmethod
    def init(cls, cfg: EncoderConfig, attention_dim: int, n_classes: int,
             rng: np.random.Generator) -> "LidModel":
        enc = Encoder.init(cfg, rng)
        return cls(enc, SapParams.init(cfg.channels, attention_dim, rng),
                   ClassifierParams.init(cfg.channels, n_classes))

    @property
    def n_classes(self) -> int:
        return self.classifier.b_out.shape[0]

    def parameters(self) -> Iterator[Parameter]:
        yield from self.encoder.parameters()
        yield from self.sap.parameters()
        yield from self.classifier.parameters()

    def trainable(self) -> list:
        return [p for p in self.parameters() if p.trainable]

    def named(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, features, valid=None, mode: str = EVAL, rng=None) -> Tensor:
        """Logits ``[N, n_classes]`` for ``[N, T, D]`` features (``[n_classes]`` for ``[T, D]``)."""
        frames = encoder_forward(features, self.encoder, mode, rng, valid)
        e, _ = sap_forward(frames, valid, self.sap)
        return classify(e, self.classifier)


def pad_batch(seqs: list) -> tuple:
    """Stack ``[T_i, D]`` arrays into zero-padded ``[N, T_max, D]`` plus valid flags."""
    t_max = max(s.shape[0] for s in seqs)
    dim = seqs[0].shape[1]
    out = np.zeros((len(seqs), t_max, dim), dtype=np.float32)
    valid = np.zeros((len(seqs), t_max), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :s.shape[0]] = s
        valid[i, :s.shape[0]] = True
    return out, valid


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

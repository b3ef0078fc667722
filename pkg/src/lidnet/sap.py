"""Self-attentive pooling, the linear classifier and its loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from lidnet.encoder import xavier_uniform
from lidnet.tensor import (
    DimensionError,
    Parameter,
    Tensor,
    affine,
    as_tensor,
    cross_entropy,
    matmul,
    reshape,
    softmax_rows,
    tanh_map,
    weighted_sum,
)

__all__ = ["SapParams", "ClassifierParams", "sap_forward", "classify", "cross_entropy"]


@dataclass
class SapParams:
    W: Parameter  # [C, A]
    b: Parameter  # [A]
    mu: Parameter  # [A]

    @classmethod
    def init(cls, channels: int, attention_dim: int, rng: np.random.Generator,
             name: str = "sap") -> "SapParams":
        return cls(
            W=Parameter(f"{name}.W", xavier_uniform(rng, (channels, attention_dim), channels, attention_dim)),
            b=Parameter(f"{name}.b", np.zeros(attention_dim)),
            mu=Parameter(f"{name}.mu", rng.normal(0.0, 1.0 / np.sqrt(attention_dim), size=attention_dim)),
        )

    def parameters(self) -> Iterator[Parameter]:
        yield from (self.W, self.b, self.mu)


@dataclass
class ClassifierParams:
    W_out: Parameter  # [C, n_classes]
    b_out: Parameter  # [n_classes]

    @classmethod
    def init(cls, channels: int, n_classes: int, name: str = "classifier") -> "ClassifierParams":
        # zero start: every class is equally likely before the first update
        return cls(W_out=Parameter(f"{name}.W_out", np.zeros((channels, n_classes))),
                   b_out=Parameter(f"{name}.b_out", np.zeros(n_classes)))

    def parameters(self) -> Iterator[Parameter]:
        yield from (self.W_out, self.b_out)


def sap_forward(frames, valid, params: SapParams) -> tuple:
    """Pool ``[T, C]`` (or ``[N, T, C]``) frames into an embedding.

    Returns ``(e, weights)``. Each frame is scored by ``tanh(x W + b) . mu``;
    the scores go through a softmax restricted to valid frames, and ``e`` is
    the weighted sum of the frames.
    """
    x = as_tensor(frames)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected [T, C] or [N, T, C] frames, got {x.shape}")
    if valid is None:
        valid = np.ones(x.shape[:-1], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != x.shape[:-1]:
        raise DimensionError(f"valid flags {valid.shape} do not match frames {x.shape}")
    # fixed-order accumulation keeps each frame's score independent of padding
    h = tanh_map(affine(x, params.W, params.b, ordered=True))
    scores = matmul(h, reshape(params.mu, (params.mu.shape[0], 1)), ordered=True)
    scores = reshape(scores, scores.shape[:-1])
    weights = softmax_rows(scores, valid)
    return weighted_sum(weights, x), weights


def classify(e, params: ClassifierParams) -> Tensor:
    e = as_tensor(e)
    if e.shape[-1] != params.W_out.shape[0]:
        raise DimensionError(f"embedding dimension {e.shape[-1]} does not match W_out {params.W_out.shape}")
    return affine(e, params.W_out, params.b_out)

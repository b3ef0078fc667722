"""QuartzNet BxR encoder built from time-channel separable 1D convolutions.

Activations are laid out ``[N, T, C]`` (batch, frames, channels); 2-D
``[T, C]`` inputs are accepted everywhere and treated as a batch of one.
Every convolution is stride 1, dilation 1, with symmetric zero padding so
the frame count never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from lidnet.tensor import (
    ContractError,
    DimensionError,
    Parameter,
    Tensor,
    _make,
    as_tensor,
    matmul,
    mul,
    add,
    relu_map,
    reshape,
)

TRAIN, EVAL = "train", "eval"

QUARTZNET_15x5_KERNELS = (33, 33, 33, 39, 39, 39, 51, 51, 51, 63, 63, 63, 75, 75, 75)


class ConfigError(ValueError):
    pass


def default_kernel_schedule(blocks: int) -> tuple:
    """The 15x5 schedule truncated to ``blocks``, repeating its last size beyond 15."""
    base = QUARTZNET_15x5_KERNELS
    return tuple(base[i] if i < len(base) else base[-1] for i in range(blocks))


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 40
    blocks: int = 15
    subblocks: int = 5
    channels: int = 512
    kernel_schedule: Optional[tuple] = None
    dropout_p: float = 0.2
    separable: bool = True

    def __post_init__(self):
        if self.blocks < 1 or self.subblocks < 1 or self.channels < 1 or self.input_dim < 1:
            raise ConfigError("blocks, subblocks, channels and input_dim must all be >= 1")
        if self.kernel_schedule is None:
            object.__setattr__(self, "kernel_schedule", default_kernel_schedule(self.blocks))
        ks = tuple(int(k) for k in self.kernel_schedule)
        object.__setattr__(self, "kernel_schedule", ks)
        if len(ks) != self.blocks:
            raise ConfigError(f"kernel_schedule has {len(ks)} entries for {self.blocks} blocks")
        if any(k < 1 or k % 2 == 0 for k in ks):
            raise ConfigError(f"kernel sizes must be odd and >= 1, got {ks}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# raw convolution ops

def _as_batch(x: Tensor) -> tuple:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected [T, C] or [N, T, C], got {x.shape}")
    return x, False


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel temporal cross-correlation: ``out[n,t,c] = sum_k xpad[n,t+k,c] * kernel[c,k]``."""
    n, t, c = x.shape
    if kernel.ndim != 2 or kernel.shape[0] != c:
        raise DimensionError(f"depthwise kernel {kernel.shape} does not fit {c} input channels")
    k = kernel.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    w = kernel.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[:, j:j + t, :] * w[:, j]

    def back(g):
        gp = np.pad(g, ((0, 0), (pad, pad), (0, 0)))
        gx = np.zeros_like(x.data)
        gw = np.empty_like(w)
        for j in range(k):
            gx += gp[:, j:j + t, :] * w[:, k - 1 - j]
            gw[:, j] = np.einsum("ntc,ntc->c", xp[:, j:j + t, :], g)
        return gx, gw

    return _make(out, (x, kernel), back, "depthwise_conv1d")


def full_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Cross-channel convolution: ``out[n,t,o] = sum_{i,k} xpad[n,t+k,i] * kernel[o,i,k]``."""
    n, t, c = x.shape
    if kernel.ndim != 3 or kernel.shape[1] != c:
        raise DimensionError(f"full kernel {kernel.shape} does not fit {c} input channels")
    c_out, _, k = kernel.shape
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    w = kernel.data
    out = np.zeros((n, t, c_out), dtype=x.data.dtype)
    for j in range(k):
        out += xp[:, j:j + t, :] @ w[:, :, j].T

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        g2 = g.reshape(-1, c_out)
        for j in range(k):
            gxp[:, j:j + t, :] += g @ w[:, :, j]
            gw[:, :, j] = g2.T @ xp[:, j:j + t, :].reshape(-1, c)
        return gxp[:, pad:pad + t, :], gw

    return _make(out, (x, kernel), back, "full_conv1d")


# ---------------------------------------------------------------------------
# layers

@dataclass
class ConvLayer:
    """Bias-free 1D convolution, either separable (depthwise + pointwise) or full.

    A separable layer without a depthwise kernel is a plain 1x1 channel mix.
    """

    depthwise: Optional[Parameter] = None  # [C_in, K]
    pointwise: Optional[Parameter] = None  # [C_in, C_out]
    full: Optional[Parameter] = None  # [C_out, C_in, K]

    @classmethod
    def init(cls, name: str, c_in: int, c_out: int, k: int, separable: bool,
             rng: np.random.Generator) -> "ConvLayer":
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"{name}: kernel size must be odd, got {k}")
        if separable:
            dw = xavier_uniform(rng, (c_in, k), k, k)
            pw = xavier_uniform(rng, (c_in, c_out), c_in, c_out)
            return cls(depthwise=Parameter(f"{name}.depthwise", dw),
                       pointwise=Parameter(f"{name}.pointwise", pw))
        w = xavier_uniform(rng, (c_out, c_in, k), c_in * k, c_out * k)
        return cls(full=Parameter(f"{name}.weight", w))

    @property
    def separable(self) -> bool:
        return self.full is None

    @property
    def in_channels(self) -> int:
        if not self.separable:
            return self.full.shape[1]
        return (self.depthwise if self.depthwise is not None else self.pointwise).shape[0]

    @property
    def out_channels(self) -> int:
        return self.pointwise.shape[1] if self.separable else self.full.shape[0]

    @property
    def kernel_size(self) -> int:
        if not self.separable:
            return self.full.shape[2]
        return 1 if self.depthwise is None else self.depthwise.shape[1]

    def parameters(self) -> Iterator[Parameter]:
        for p in (self.depthwise, self.pointwise, self.full):
            if p is not None:
                yield p

    def composed_kernel(self) -> np.ndarray:
        """Full ``[C_out, C_in, K]`` kernel equivalent to the separable pair."""
        if not self.separable:
            return self.full.data.copy()
        dw = np.ones((self.in_channels, 1)) if self.depthwise is None else self.depthwise.data
        return np.einsum("ik,io->oik", dw, self.pointwise.data)


@dataclass
class BatchNormLayer:
    gamma: Parameter
    beta: Parameter
    running_mean: Parameter
    running_var: Parameter
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def init(cls, name: str, channels: int) -> "BatchNormLayer":
        return cls(
            gamma=Parameter(f"{name}.gamma", np.ones(channels)),
            beta=Parameter(f"{name}.beta", np.zeros(channels)),
            running_mean=Parameter(f"{name}.running_mean", np.zeros(channels), trainable=False),
            running_var=Parameter(f"{name}.running_var", np.ones(channels), trainable=False),
        )

    def parameters(self) -> Iterator[Parameter]:
        yield from (self.gamma, self.beta, self.running_mean, self.running_var)


def conv1d(x: Tensor, layer: ConvLayer, valid=None) -> Tensor:
    """Same-padded convolution. Frames flagged invalid are zeroed on the way in."""
    x = as_tensor(x)
    xb, squeeze = _as_batch(x)
    if xb.shape[2] != layer.in_channels:
        raise DimensionError(f"input has {xb.shape[2]} channels, layer expects {layer.in_channels}")
    if valid is not None:
        xb = mul(xb, np.asarray(valid, dtype=xb.data.dtype).reshape(xb.shape[0], xb.shape[1], 1))
    if layer.separable:
        out = xb if layer.depthwise is None else depthwise_conv1d(xb, layer.depthwise)
        out = out if layer.pointwise is None else matmul(out, layer.pointwise)
    else:
        out = full_conv1d(xb, layer.full)
    return reshape(out, out.shape[1:]) if squeeze else out


def batchnorm(x: Tensor, layer: BatchNormLayer, mode: str = TRAIN) -> Tensor:
    """Per-channel normalization over batch and time.

    Train mode normalizes with the biased batch variance and folds the
    unbiased one into the running estimate; eval mode uses running stats only.
    """
    x = as_tensor(x)
    xb, squeeze = _as_batch(x)
    c = xb.shape[2]
    if layer.gamma.shape != (c,):
        raise DimensionError(f"batch norm over {layer.gamma.shape[0]} channels given {c}")
    gamma, beta = layer.gamma, layer.beta
    data = xb.data
    if mode == TRAIN:
        m = data.shape[0] * data.shape[1]
        if m < 2:
            raise ContractError(f"train-mode batch norm needs N*T >= 2, got {m}")
        mu = data.mean(axis=(0, 1))
        var = data.var(axis=(0, 1))
        mom = layer.momentum
        layer.running_mean.data[...] = (1 - mom) * layer.running_mean.data + mom * mu
        layer.running_var.data[...] = (1 - mom) * layer.running_var.data + mom * var * m / (m - 1)
    elif mode == EVAL:
        m = None
        mu, var = layer.running_mean.data, layer.running_var.data
    else:
        raise ValueError(f"mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    inv = 1.0 / np.sqrt(var + layer.eps)
    xhat = (data - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        gg = (g * xhat).sum(axis=(0, 1))
        gb = g.sum(axis=(0, 1))
        if m is None:
            gx = g * (gamma.data * inv)
        else:
            gx = (gamma.data * inv) * (g - gb / m - xhat * (gg / m))
        return gx, gg, gb

    out_t = _make(out.astype(data.dtype), (xb, gamma, beta), back, "batchnorm")
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); identity outside train mode."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if mode != TRAIN or p == 0:
        return x
    keep = rng.random(x.shape) >= p
    return mul(x, keep.astype(x.data.dtype) / (1.0 - p))


# ---------------------------------------------------------------------------
# blocks and the full encoder

@dataclass
class SubBlock:
    conv: ConvLayer
    bn: BatchNormLayer

    def parameters(self) -> Iterator[Parameter]:
        yield from self.conv.parameters()
        yield from self.bn.parameters()


@dataclass
class Block:
    subblocks: list
    residual_conv: ConvLayer
    residual_bn: BatchNormLayer

    @classmethod
    def init(cls, name: str, channels: int, repeat: int, kernel: int, separable: bool,
             rng: np.random.Generator) -> "Block":
        subs = [SubBlock(ConvLayer.init(f"{name}.sub{r}.conv", channels, channels, kernel, separable, rng),
                         BatchNormLayer.init(f"{name}.sub{r}.bn", channels))
                for r in range(repeat)]
        res = ConvLayer(pointwise=Parameter(f"{name}.residual.pointwise",
                                            xavier_uniform(rng, (channels, channels), channels, channels)))
        return cls(subs, res, BatchNormLayer.init(f"{name}.residual.bn", channels))

    def parameters(self) -> Iterator[Parameter]:
        for s in self.subblocks:
            yield from s.parameters()
        yield from self.residual_conv.parameters()
        yield from self.residual_bn.parameters()


def block_forward(x: Tensor, block: Block, mode: str = TRAIN, rng=None, dropout_p: float = 0.0,
                  valid=None) -> Tensor:
    """R x (conv, bn, relu, dropout); the residual joins after the last bn, before its relu."""
    residual = batchnorm(conv1d(x, block.residual_conv, valid), block.residual_bn, mode)
    h = x
    last = len(block.subblocks) - 1
    for r, sub in enumerate(block.subblocks):
        h = batchnorm(conv1d(h, sub.conv, valid), sub.bn, mode)
        if r == last:
            h = add(h, residual)
        h = dropout(relu_map(h), dropout_p, mode, rng)
    return h


@dataclass
class Encoder:
    cfg: EncoderConfig
    prologue_conv: ConvLayer
    prologue_bn: BatchNormLayer
    blocks: list = field(default_factory=list)

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator, name: str = "encoder") -> "Encoder":
        k0 = cfg.kernel_schedule[0]
        pro = ConvLayer.init(f"{name}.prologue.conv", cfg.input_dim, cfg.channels, k0, cfg.separable, rng)
        bn = BatchNormLayer.init(f"{name}.prologue.bn", cfg.channels)
        blocks = [Block.init(f"{name}.block{b}", cfg.channels, cfg.subblocks, k, cfg.separable, rng)
                  for b, k in enumerate(cfg.kernel_schedule)]
        return cls(cfg, pro, bn, blocks)

    def parameters(self) -> Iterator[Parameter]:
        yield from self.prologue_conv.parameters()
        yield from self.prologue_bn.parameters()
        for b in self.blocks:
            yield from b.parameters()


def encoder_forward(features, encoder: Encoder, mode: str = TRAIN, rng=None, valid=None) -> Tensor:
    """``[T, input_dim]`` or ``[N, T, input_dim]`` features to ``[.., T, channels]`` frames."""
    x = as_tensor(features)
    if x.shape[-1] != encoder.cfg.input_dim:
        raise DimensionError(f"features have dimension {x.shape[-1]}, encoder expects {encoder.cfg.input_dim}")
    p = encoder.cfg.dropout_p
    h = relu_map(batchnorm(conv1d(x, encoder.prologue_conv, valid), encoder.prologue_bn, mode))
    for block in encoder.blocks:
        h = block_forward(h, block, mode, rng, p, valid)
    return h


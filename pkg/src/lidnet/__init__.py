"""Spoken language identification: QuartzNet encoder, self-attentive pooling, cross-entropy classifier."""

from lidnet.data import LabelSet
from lidnet.encoder import EncoderConfig
from lidnet.features import FeatureConfig, compute_mfsc
from lidnet.model import LidModel
from lidnet.tensor import Parameter, Tensor, grad_check, precision

__version__ = "0.1.0"

__all__ = ["EncoderConfig", "FeatureConfig", "LabelSet", "LidModel", "Parameter", "Tensor",
           "compute_mfsc", "grad_check", "precision"]

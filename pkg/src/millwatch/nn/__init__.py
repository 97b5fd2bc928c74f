"""Minimal neural-network engine: layers, loss, optimizer, serialization.

The spec-level operation names (conv1d_apply, maxpool_apply, ...) are thin
wrappers over the layer objects so single-sample call sites don't have to
manage a batch axis.
"""

import numpy as np

from .layers import BatchNorm1D, Conv1D, Layer, Linear, MaxPool1D, ReLU, as_tensor
from .loss import softmax, softmax_backward, softmax_cross_entropy
from .network import Network, backprop_network, count_parameters, layer_parameter_counts
from .optim import AdamState, adam_step
from .serialize import (
    layers_from_bytes,
    layers_to_bytes,
    load_layers,
    save_layers,
)

__all__ = [
    "AdamState",
    "BatchNorm1D",
    "Conv1D",
    "Layer",
    "Linear",
    "MaxPool1D",
    "Network",
    "ReLU",
    "adam_step",
    "as_tensor",
    "backprop_network",
    "batchnorm_apply",
    "conv1d_apply",
    "count_parameters",
    "layer_parameter_counts",
    "layers_from_bytes",
    "layers_to_bytes",
    "linear_apply",
    "load_layers",
    "maxpool_apply",
    "relu_apply",
    "save_layers",
    "softmax",
    "softmax_backward",
    "softmax_cross_entropy",
]


def conv1d_apply(x, layer):
    """Convolve a single (C_in, L) input; returns (C_out, L)."""
    x = np.asarray(x, dtype=np.float64)
    return layer.forward(x[None, ...])[0]


def maxpool_apply(x, layer=None):
    """Pool a single (C, L) input; returns (C, L/2)."""
    layer = layer if layer is not None else MaxPool1D()
    x = np.asarray(x, dtype=np.float64)
    return layer.forward(x[None, ...])[0]


def relu_apply(x, layer=None):
    layer = layer if layer is not None else ReLU()
    return layer.forward(np.asarray(x, dtype=np.float64))


def batchnorm_apply(x, layer, mode="train"):
    """Normalize a (B, C, L) or (B, C) batch; mode is 'train' or 'infer'."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return layer.forward(x, train=(mode == "train"))


def linear_apply(x, layer):
    """Apply a linear layer to a (B, D_in) batch."""
    return layer.forward(x)

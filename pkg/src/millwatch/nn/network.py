"""Layer stacks: forward/backward composition and parameter accounting."""

import numpy as np

from .loss import softmax_cross_entropy


class Network:
    """An ordered list of layers trained as one unit."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_out):
        """Propagate an output gradient back through every layer."""
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.gradients()]

    def set_parameters(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(values)}")
        for p, v in zip(params, values):
            p[...] = v

    def param_count(self, convention="paper"):
        return count_parameters(self.layers, convention)


def backprop_network(layers, x, labels):
    """Forward through `layers`, softmax cross-entropy against `labels`,
    then backward. Returns (loss, gradients aligned with the layers'
    learnable values)."""
    net = layers if isinstance(layers, Network) else Network(layers)
    logits = net.forward(x, train=True)
    loss, grad = softmax_cross_entropy(logits, labels)
    net.backward(grad)
    return loss, net.gradients()


def layer_parameter_counts(layers, convention="paper"):
    """Per-layer parameter counts.

    `paper` counts 3 values per batch-norm channel (matching the published
    architecture tables); `learnable` counts gamma+beta only. Convolutions
    carry no bias under either convention.
    """
    if convention not in ("paper", "learnable"):
        raise ValueError(f"unknown counting convention: {convention!r}")
    seq = layers.layers if isinstance(layers, Network) else layers
    return [layer.param_count(convention) for layer in seq]


def count_parameters(layers, convention="paper"):
    return int(np.sum(layer_parameter_counts(layers, convention), dtype=np.int64))

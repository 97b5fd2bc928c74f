"""Softmax cross-entropy loss and row-wise softmax with backward."""

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError


def softmax(logits):
    """Row-wise softmax with max subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs, grad_out):
    """Input gradient of softmax rows given the output gradient."""
    dot = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - dot)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood over the batch.

    Returns (loss, grad) where grad is d(loss)/d(logits), i.e.
    (softmax - one_hot) / batch_size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeMismatchError(f"logits must be (batch, classes), got rank {logits.ndim}")
    if not np.isfinite(logits).all():
        raise NonFiniteError("non-finite logits entering softmax_cross_entropy")
    labels = np.asarray(labels)
    B, Q = logits.shape
    if labels.shape != (B,):
        raise ShapeMismatchError(f"labels must be ({B},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= Q:
        raise ValueError(f"label out of range [0, {Q})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(B), labels]))
    grad = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    return loss, grad

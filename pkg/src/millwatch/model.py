"""Two-stage encoder-classifier: architecture, training, persistence.

The upstream network maps one (1, 400) signal window to 4 interactive-state
scores; the downstream network maps the 8-window score trajectory (4 channels
of length 8) to 7 classes. The upstream is pretrained on steady-state windows,
then both stages are trained jointly.
"""

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, MissingClassError, TrainingDivergedError
from .nn import (
    AdamState,
    BatchNorm1D,
    Conv1D,
    Linear,
    MaxPool1D,
    Network,
    ReLU,
    adam_step,
    softmax,
    softmax_backward,
    softmax_cross_entropy,
)
from .nn.serialize import _Reader, layers_from_bytes, layers_from_reader, layers_to_bytes

WINDOW_LEN = 400
SEQUENCE_LEN = 8
NUM_STATE_SCORES = 4
NUM_OUTPUT_CLASSES = 7

_MODEL_FLAG_NORMALIZE = 1


def build_upstream(rng=None):
    """The 15-entry encoder stack: three Conv/MaxPool/ReLU/BatchNorm blocks
    with 5, 25, 50 channels, then Linear 2500x200, 200x10, 10x4."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return [
        Conv1D(1, 5, rng=rng),
        MaxPool1D(),
        ReLU(),
        BatchNorm1D(5),
        Conv1D(5, 25, rng=rng),
        MaxPool1D(),
        ReLU(),
        BatchNorm1D(25),
        Conv1D(25, 50, rng=rng),
        MaxPool1D(),
        ReLU(),
        BatchNorm1D(50),
        Linear(2500, 200, rng=rng),
        Linear(200, 10, rng=rng),
        Linear(10, 4, rng=rng),
    ]


def build_downstream(rng=None):
    """The classifier stack over the score trajectory: two length-preserving
    convolutions with batch norm (no pooling, no activations), then Linear
    128x64 and 64x7."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return [
        Conv1D(4, 8, rng=rng),
        BatchNorm1D(8),
        Conv1D(8, 16, rng=rng),
        BatchNorm1D(16),
        Linear(128, 64, rng=rng),
        Linear(64, 7, rng=rng),
    ]


class EncoderClassifier:
    """Upstream encoder + downstream classifier with shared-weight windowing.

    `normalize_scores` softmaxes each window's 4 upstream scores before the
    downstream stage so the trajectory is bounded and comparable across
    windows.
    """

    def __init__(self, upstream, downstream, normalize_scores=True):
        self.upstream = upstream if isinstance(upstream, Network) else Network(upstream)
        self.downstream = (
            downstream if isinstance(downstream, Network) else Network(downstream)
        )
        self.normalize_scores = normalize_scores
        self._cache = None

    def forward(self, x, train=False):
        """x: (B, n, k, w) or a single (n, k, w) sequence -> (B, 7) / (7,)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None, ...]
        if x.ndim != 4 or x.shape[1:] != (SEQUENCE_LEN, 1, WINDOW_LEN):
            raise ValueError(
                f"expected (batch, {SEQUENCE_LEN}, 1, {WINDOW_LEN}) input, got {x.shape}"
            )
        B = x.shape[0]
        windows = x.reshape(B * SEQUENCE_LEN, 1, WINDOW_LEN)
        scores = self.upstream.forward(windows, train=train)
        if self.normalize_scores:
            probs = softmax(scores)
        else:
            probs = scores
        # (B*n, p) -> (B, n, p) -> channels-first (B, p, n)
        traj = probs.reshape(B, SEQUENCE_LEN, NUM_STATE_SCORES).transpose(0, 2, 1)
        traj = np.ascontiguousarray(traj)
        out = self.downstream.forward(traj, train=train)
        if train:
            self._cache = (B, probs if self.normalize_scores else None)
        return out[0] if single else out

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("EncoderClassifier.backward without cached forward")
        B, probs = self._cache
        g_traj = self.downstream.backward(grad_out)
        g_scores = np.ascontiguousarray(g_traj.transpose(0, 2, 1)).reshape(
            B * SEQUENCE_LEN, NUM_STATE_SCORES
        )
        if self.normalize_scores:
            g_scores = softmax_backward(probs, g_scores)
        self.upstream.backward(g_scores)

    def parameters(self):
        return self.upstream.parameters() + self.downstream.parameters()

    def gradients(self):
        return self.upstream.gradients() + self.downstream.gradients()

    def to_bytes(self):
        layers = self.upstream.layers + self.downstream.layers
        blob = layers_to_bytes(layers)
        flags = _MODEL_FLAG_NORMALIZE if self.normalize_scores else 0
        return blob + struct.pack("<II", len(self.upstream.layers), flags)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(data)
        layers = layers_from_reader(reader)
        trailer = reader.raw(8)
        if reader.pos != len(data):
            raise DataError("unexpected bytes after model trailer")
        upstream_count, flags = struct.unpack("<II", trailer)
        if upstream_count > len(layers):
            raise DataError("model trailer upstream count exceeds layer count")
        return cls(
            layers[:upstream_count],
            layers[upstream_count:],
            normalize_scores=bool(flags & _MODEL_FLAG_NORMALIZE),
        )

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def hash(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


def classify_sequence(model, window_sequence, mode="infer"):
    """Score one n x k x w window sequence; returns the 7-class score vector."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return model.forward(window_sequence, train=(mode == "train"))


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 32
    pretrain_epochs: int = 20
    epochs: int = 30
    val_fraction: float = 0.2
    seed: int = 0
    normalize_scores: bool = True
    freeze_upstream: bool = False
    verbose: bool = False

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch-norm needs it)")


def _split_dataset(n, val_fraction, rng):
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise DataError("dataset too small for the requested validation split")
    return order[n_val:], order[:n_val]


def _check_classes(labels, required, where):
    present = set(int(v) for v in np.unique(labels))
    missing = sorted(set(range(required)) - present)
    if missing:
        raise MissingClassError(
            f"{where} is missing class index(es) {missing}; "
            f"all {required} classes must be present"
        )


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        batch = indices[start:start + batch_size]
        if len(batch) < 2:
            # batch-norm train mode cannot handle a single-sample remainder
            continue
        yield batch


def _guard_loss(loss, where):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss during {where}")


class _Trainer:
    """Adam loop shared by pretraining and end-to-end training."""

    def __init__(self, params_fn, grads_fn, cfg):
        self.params_fn = params_fn
        self.grads_fn = grads_fn
        self.state = AdamState.for_params(
            params_fn(), lr=cfg.learning_rate, beta1=cfg.beta1,
            beta2=cfg.beta2, eps=cfg.eps_adam,
        )

    def step(self):
        params = self.params_fn()
        new_params, self.state = adam_step(params, self.grads_fn(), self.state)
        for p, v in zip(params, new_params):
            p[...] = v


def _evaluate(forward, x, y, batch_size=256):
    """Mean loss and accuracy in infer mode."""
    losses, hits, total = 0.0, 0, 0
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        logits = forward(xb)
        loss, _ = softmax_cross_entropy(logits, yb)
        losses += loss * len(xb)
        hits += int((logits.argmax(axis=1) == yb).sum())
        total += len(xb)
    return losses / total, hits / total


def pretrain_upstream(windows, labels, cfg):
    """Train the upstream encoder on labeled steady-state windows.

    windows: (N, 1, 400), labels: (N,) in [0, 4). Returns (Network, report)
    where report is a list of per-epoch record dicts.
    """
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(windows) == 0:
        raise DataError("pretraining dataset is empty")
    if windows.shape[1:] != (1, WINDOW_LEN):
        raise DataError(f"pretraining windows must be (N, 1, {WINDOW_LEN})")
    rng = np.random.default_rng(cfg.seed)
    net = Network(build_upstream(rng))
    train_idx, val_idx = _split_dataset(len(windows), cfg.val_fraction, rng)
    _check_classes(labels[train_idx], NUM_STATE_SCORES, "pretraining training split")

    trainer = _Trainer(net.parameters, net.gradients, cfg)
    report = []
    for epoch in range(cfg.pretrain_epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_loss, seen = 0.0, 0
        for batch in _batches(order, cfg.batch_size):
            logits = net.forward(windows[batch], train=True)
            loss, grad = softmax_cross_entropy(logits, labels[batch])
            _guard_loss(loss, f"pretraining epoch {epoch}")
            net.backward(grad)
            trainer.step()
            epoch_loss += loss * len(batch)
            seen += len(batch)
        val_loss, val_acc = _evaluate(net.forward, windows[val_idx], labels[val_idx])
        report.append(
            {"epoch": epoch, "split": "train", "loss": epoch_loss / seen, "accuracy": ""}
        )
        report.append(
            {"epoch": epoch, "split": "val", "loss": val_loss, "accuracy": val_acc}
        )
        if cfg.verbose:
            print(
                f"pretrain epoch {epoch}: train loss {epoch_loss / seen:.4f} "
                f"val loss {val_loss:.4f} val acc {val_acc:.3f}"
            )
    return net, report


def train_end_to_end(signals, labels, upstream, cfg):
    """Joint training of both stages on labeled length-3200 signals.

    signals: (N, 3200), labels: (N,) in [0, 7). Each signal splits into 8
    contiguous windows. Returns (EncoderClassifier, report).
    """
    signals = np.asarray(signals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    span = SEQUENCE_LEN * WINDOW_LEN
    if len(signals) == 0:
        raise DataError("end-to-end dataset is empty")
    if signals.ndim != 2 or signals.shape[1] != span:
        raise DataError(f"end-to-end samples must be (N, {span})")
    x = signals.reshape(len(signals), SEQUENCE_LEN, 1, WINDOW_LEN)

    rng = np.random.default_rng(cfg.seed + 1)
    # clone the pretrained upstream so the caller's network is never mutated
    up_layers = upstream.layers if isinstance(upstream, Network) else list(upstream)
    upstream_copy = Network(layers_from_bytes(layers_to_bytes(up_layers)))
    model = EncoderClassifier(
        upstream_copy, build_downstream(rng), normalize_scores=cfg.normalize_scores
    )
    train_idx, val_idx = _split_dataset(len(x), cfg.val_fraction, rng)
    _check_classes(labels[train_idx], NUM_OUTPUT_CLASSES, "end-to-end training split")

    if cfg.freeze_upstream:
        params_fn = model.downstream.parameters
        grads_fn = model.downstream.gradients
    else:
        params_fn = model.parameters
        grads_fn = model.gradients
    trainer = _Trainer(params_fn, grads_fn, cfg)

    def infer_forward(xb):
        return model.forward(xb, train=False)

    report = []
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_loss, seen = 0.0, 0
        for batch in _batches(order, cfg.batch_size):
            logits = model.forward(x[batch], train=True)
            loss, grad = softmax_cross_entropy(logits, labels[batch])
            _guard_loss(loss, f"end-to-end epoch {epoch}")
            model.backward(grad)
            trainer.step()
            epoch_loss += loss * len(batch)
            seen += len(batch)
        val_loss, val_acc = _evaluate(infer_forward, x[val_idx], labels[val_idx])
        report.append(
            {"epoch": epoch, "split": "train", "loss": epoch_loss / seen, "accuracy": ""}
        )
        report.append(
            {"epoch": epoch, "split": "val", "loss": val_loss, "accuracy": val_acc}
        )
        if cfg.verbose:
            print(
                f"train epoch {epoch}: train loss {epoch_loss / seen:.4f} "
                f"val loss {val_loss:.4f} val acc {val_acc:.3f}"
            )
    return model, report


def write_training_report(path, report, config_snapshot=None):
    """Line-delimited CSV: epoch, split, loss, accuracy."""
    import csv
    import json

    with open(path, "w", newline="") as fh:
        if config_snapshot is not None:
            fh.write(f"# config={json.dumps(config_snapshot, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy"])
        for row in report:
            writer.writerow([row["epoch"], row["split"], repr(row["loss"]),
                             repr(row["accuracy"]) if row["accuracy"] != "" else ""])


def training_config_from_dict(d):
    cfg = TrainingConfig()
    return replace(cfg, **{k: v for k, v in d.items() if hasattr(cfg, k)})

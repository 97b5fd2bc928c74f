"""Signal front end: denoising, sliding-window partitioning, CSV ingestion.

The partitioner keeps a rolling buffer of the most recent n*w samples and
emits one WindowSequence (n contiguous windows of k x w) every H samples once
the buffer has filled, regardless of how the incoming stream is chunked.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvFormatError, DataError, ShapeMismatchError


@dataclass
class WindowingConfig:
    window: int = 400          # w, samples per window
    overlap: int = 25          # lambda, samples shared by successive windows
    sequence_len: int = 8      # n, windows per emitted sequence
    channels: int = 1          # k
    fs: float = 250.0          # sample rate, Hz
    stride: int | None = None  # H, decision stride; defaults to window - overlap

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 <= self.overlap < self.window:
            raise ValueError("overlap must satisfy 0 <= overlap < window")
        if self.sequence_len < 1:
            raise ValueError("sequence_len must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.stride is None:
            self.stride = self.window - self.overlap
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def span(self):
        return self.sequence_len * self.window


@dataclass
class WindowSequence:
    """n contiguous windows plus the source timing of the final sample."""

    data: np.ndarray  # (n, k, w)
    end_index: int    # absolute index of the final sample in the stream
    fs: float

    @property
    def end_time(self):
        return self.end_index / self.fs

    def flat(self):
        return self.data.reshape(-1)


@dataclass
class FilterSpec:
    kind: str = "none"  # none | moving-average | median
    width: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "moving-average", "median"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind != "none":
            if self.width < 1 or self.width % 2 == 0:
                raise ValueError("filter width must be odd and >= 1")


def denoise(signal, spec):
    """Centered filter with edge replication; kind 'none' is the identity."""
    signal = np.asarray(signal, dtype=np.float64)
    if spec.kind == "none":
        return signal.copy()
    if spec.width > len(signal):
        raise DataError(
            f"filter width {spec.width} exceeds signal length {len(signal)}"
        )
    half = spec.width // 2
    padded = np.concatenate(
        [np.full(half, signal[0]), signal, np.full(half, signal[-1])]
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, spec.width)
    if spec.kind == "moving-average":
        return windows.mean(axis=1)
    return np.median(windows, axis=1)


class StreamPartitioner:
    """Single-producer, single-consumer sliding-window state machine.

    Emissions depend only on the absolute number of samples consumed, so
    feeding a stream in any chunking produces the identical sequence list.
    """

    def __init__(self, cfg):
        if cfg.channels != 1:
            raise ShapeMismatchError(
                "StreamPartitioner handles single-channel streams (k=1)"
            )
        self.cfg = cfg
        self._buffer = deque(maxlen=cfg.span)
        self._consumed = 0

    @property
    def position(self):
        return self._consumed

    def push(self, samples):
        """Consume samples; return the WindowSequences they complete, in order."""
        cfg = self.cfg
        emitted = []
        for value in np.asarray(samples, dtype=np.float64).reshape(-1):
            self._buffer.append(value)
            self._consumed += 1
            past_fill = self._consumed - cfg.span
            if past_fill >= 0 and past_fill % cfg.stride == 0:
                data = np.array(self._buffer).reshape(
                    cfg.sequence_len, cfg.channels, cfg.window
                )
                emitted.append(
                    WindowSequence(data=data, end_index=self._consumed - 1, fs=cfg.fs)
                )
        return emitted


def push_samples(partitioner, samples):
    return partitioner.push(samples)


def window_count(length, cfg):
    """Number of sequences a length-`length` stream produces (closed form)."""
    if length < 0:
        raise ValueError("length must be >= 0")
    if length < cfg.span:
        return 0
    return 1 + (length - cfg.span) // cfg.stride


def iter_sequences(signal, cfg):
    """Partition a complete in-memory signal; yields WindowSequence objects."""
    part = StreamPartitioner(cfg)
    for seq in part.push(signal):
        yield seq


def write_signal_csv(path, samples, fs, labels=None, extra_header=None):
    """Write the `# fs=<Hz>` header then one sample (optionally `,label`) per
    line. Floats use repr so the round-trip is value-exact."""
    samples = np.asarray(samples, dtype=np.float64)
    if labels is not None and len(labels) != len(samples):
        raise DataError("labels length must match samples length")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# fs={float(fs)!r}\n")
        if extra_header:
            for key, value in extra_header.items():
                fh.write(f"# {key}={value}\n")
        if labels is None:
            for v in samples:
                fh.write(f"{float(v)!r}\n")
        else:
            for v, lab in zip(samples, labels):
                fh.write(f"{float(v)!r},{lab}\n")


def read_signal_csv(path):
    """Parse a signal CSV; returns (samples, labels_or_None, header dict).

    Parsing is strict: the first non-empty line must be the fs header, every
    data line is either `value` or `value,label`, consistently, and malformed
    lines abort with their line number.
    """
    samples = []
    labels = []
    header = {}
    saw_fs = False
    labeled = None
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise CsvFormatError(path, line_no, f"malformed header {line!r}")
                key, value = body.split("=", 1)
                key = key.strip()
                if not saw_fs and key != "fs":
                    raise CsvFormatError(path, line_no, "first header must be '# fs=<Hz>'")
                if key == "fs":
                    try:
                        header["fs"] = float(value)
                    except ValueError:
                        raise CsvFormatError(path, line_no, f"bad fs value {value!r}")
                    saw_fs = True
                else:
                    header[key] = value.strip()
                continue
            if not saw_fs:
                raise CsvFormatError(path, line_no, "data before '# fs=<Hz>' header")
            parts = line.split(",")
            if len(parts) not in (1, 2):
                raise CsvFormatError(path, line_no, f"expected 1 or 2 columns, got {len(parts)}")
            if labeled is None:
                labeled = len(parts) == 2
            elif labeled != (len(parts) == 2):
                raise CsvFormatError(path, line_no, "inconsistent column count")
            try:
                samples.append(float(parts[0]))
            except ValueError:
                raise CsvFormatError(path, line_no, f"bad sample value {parts[0]!r}")
            if labeled:
                label = parts[1].strip()
                if not label:
                    raise CsvFormatError(path, line_no, "empty label column")
                labels.append(label)
    if not saw_fs:
        raise CsvFormatError(path, 1, "missing '# fs=<Hz>' header")
    return (
        np.asarray(samples, dtype=np.float64),
        labels if labeled else None,
        header,
    )

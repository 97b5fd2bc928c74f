"""Synthetic milling-trial generator and dataset extraction.

A trial is a DC-spindle-current analog: a flat idle level, a linear
engagement ramp with growing tooth-passing ripple, a plateau at the cutting
level, and a disengagement ramp with decaying ripple, plus Gaussian noise.
Ground-truth per-sample state labels and the three transition points are
recorded alongside the samples.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DataError
from .labels import NUM_EVENTS, NUM_STATES, STATE_INDEX, STATE_NAMES
from .stream import read_signal_csv, write_signal_csv

# NoInt, Entry, Const, Exit baseline durations. The idle segment is kept
# longer than one full classifier span (8 * 400) so the first transition can
# appear in the final window of an emitted sequence.
DEFAULT_DURATIONS = (4200, 1200, 2400, 1200)


@dataclass
class GenParams:
    mu0: float = 0.2            # idle current level
    mu1: float = 1.0            # cutting current level
    sigma: float = 0.05         # Gaussian noise std
    ripple_amp: float = 0.08    # tooth-passing ripple amplitude at full engagement
    ripple_hz: float = 35.0
    ripple_onset: float = 0.35  # ripple fraction present at first tooth contact
    fs: float = 250.0
    length: int = 9000
    base_durations: tuple = DEFAULT_DURATIONS
    duration_jitter: float = 0.2
    entry_ramp: int | None = None  # defaults to the whole Entry segment
    exit_ramp: int | None = None   # defaults to entry_ramp / 2.5
    seed: int = 0

    def validate(self):
        if self.mu1 <= self.mu0:
            raise DataError("mu1 must exceed mu0")
        if self.sigma < 0 or self.ripple_amp < 0:
            raise DataError("sigma and ripple_amp must be >= 0")
        if not 0 <= self.ripple_onset <= 1:
            raise DataError("ripple_onset must be in [0, 1]")
        if self.fs <= 0 or self.length <= 0:
            raise DataError("fs and length must be positive")
        if len(self.base_durations) != NUM_STATES or min(self.base_durations) <= 0:
            raise DataError("base_durations must be four positive values")
        if not 0 <= self.duration_jitter < 1:
            raise DataError("duration_jitter must be in [0, 1)")


@dataclass
class TrialRecording:
    samples: np.ndarray          # (length,)
    labels: np.ndarray           # (length,) state indices 0..3
    transition_points: tuple     # first sample index of Entry, Const, Exit
    params: GenParams
    seed: int

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if len(self.samples) != len(self.labels):
            raise DataError("samples/labels length mismatch")
        points = list(self.transition_points)
        if points != sorted(points) or len(set(points)) != len(points):
            raise DataError("transition points must be strictly increasing")
        if points and (points[0] <= 0 or points[-1] >= len(self.samples)):
            raise DataError("transition points must lie inside the trial")
        # labels must be contiguous runs walking the state order from NoInt;
        # a prefix (e.g. a trial that never leaves NoInt) is permitted
        boundaries = np.flatnonzero(np.diff(self.labels)) + 1
        if not np.array_equal(boundaries, np.asarray(self.transition_points, dtype=np.int64)):
            raise DataError("transition points do not match the label boundaries")
        run_states = self.labels[np.concatenate([[0], boundaries])]
        if not np.array_equal(run_states, np.arange(len(run_states))):
            raise DataError("labels do not follow the NoInt->Entry->Const->Exit order")

    @property
    def fs(self):
        return self.params.fs

    def state_at(self, index):
        return int(self.labels[index])

    def transition_times(self):
        """(from_state, to_state, sample index, time s) per ground-truth change."""
        out = []
        for i, point in enumerate(self.transition_points):
            out.append((STATE_NAMES[i], STATE_NAMES[i + 1], point, point / self.fs))
        return out

    def segments(self):
        """[(state index, start, end)] half-open per-state spans."""
        bounds = [0, *self.transition_points, len(self.samples)]
        return [(i, bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]

    def to_csv(self, path):
        params = asdict(self.params)
        params["base_durations"] = list(params["base_durations"])
        write_signal_csv(
            path,
            self.samples,
            self.fs,
            labels=[STATE_NAMES[i] for i in self.labels],
            extra_header={
                "seed": self.seed,
                "gen_params": json.dumps(params, sort_keys=True),
            },
        )

    @classmethod
    def from_csv(cls, path):
        samples, names, header = read_signal_csv(path)
        if names is None:
            raise DataError(f"{path}: trial CSV must carry the label column")
        try:
            labels = np.array([STATE_INDEX[n] for n in names], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"{path}: unknown state label {exc.args[0]!r}")
        points = tuple(int(v) for v in (np.flatnonzero(np.diff(labels)) + 1))
        if "gen_params" in header:
            raw = json.loads(header["gen_params"])
            raw["base_durations"] = tuple(raw["base_durations"])
            params = GenParams(**raw)
        else:
            params = GenParams(fs=header["fs"], length=len(samples))
        seed = int(header.get("seed", params.seed))
        return cls(samples=samples, labels=labels, transition_points=points,
                   params=params, seed=seed)


def _realized_durations(params, rng):
    base = np.asarray(params.base_durations, dtype=np.float64)
    jitter = rng.uniform(1 - params.duration_jitter, 1 + params.duration_jitter,
                         size=NUM_STATES)
    scaled = base * jitter
    scaled *= params.length / scaled.sum()
    cuts = np.rint(np.cumsum(scaled)).astype(np.int64)
    cuts[-1] = params.length
    durations = np.diff(np.concatenate([[0], cuts]))
    if (durations <= 0).any():
        raise DataError("jittered durations collapsed a state segment")
    return durations


def generate_trial(params):
    """Deterministic (given params.seed) synthetic trial with ground truth."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    d = _realized_durations(params, rng)
    t1, t2, t3 = int(d[0]), int(d[0] + d[1]), int(d[0] + d[1] + d[2])
    n = params.length

    entry_ramp = params.entry_ramp if params.entry_ramp is not None else int(d[1])
    entry_ramp = max(1, min(entry_ramp, int(d[1])))
    exit_ramp = (
        params.exit_ramp
        if params.exit_ramp is not None
        else int(round(entry_ramp / 2.5))
    )
    exit_ramp = max(1, min(exit_ramp, int(d[3])))

    idx = np.arange(n, dtype=np.float64)
    mean = np.full(n, params.mu0)
    rise = np.clip((idx[t1:t2] - t1) / entry_ramp, 0.0, 1.0)
    mean[t1:t2] = params.mu0 + (params.mu1 - params.mu0) * rise
    mean[t2:t3] = params.mu1
    fall = np.clip((idx[t3:] - t3) / exit_ramp, 0.0, 1.0)
    mean[t3:] = params.mu1 - (params.mu1 - params.mu0) * fall

    # tooth-passing ripple appears at first contact, grows across Entry,
    # and dies out across Exit
    onset = params.ripple_onset
    envelope = np.zeros(n)
    envelope[t1:t2] = onset + (1.0 - onset) * (idx[t1:t2] - t1) / max(1, int(d[1]))
    envelope[t2:t3] = 1.0
    envelope[t3:] = 1.0 - (idx[t3:] - t3) / max(1, int(d[3]))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ripple = params.ripple_amp * envelope * np.sin(
        2.0 * np.pi * params.ripple_hz * idx / params.fs + phase
    )

    noise = rng.normal(0.0, params.sigma, size=n) if params.sigma > 0 else np.zeros(n)
    samples = mean + ripple + noise

    labels = np.empty(n, dtype=np.int64)
    labels[:t1] = 0
    labels[t1:t2] = 1
    labels[t2:t3] = 2
    labels[t3:] = 3
    return TrialRecording(samples=samples, labels=labels,
                          transition_points=(t1, t2, t3),
                          params=replace(params), seed=params.seed)


def extract_steady_samples(trials, window=400, margin=200, stride=5,
                           max_per_class=750, balance=True, seed=0,
                           return_provenance=False):
    """Labeled 4-class window dataset from well-inside-state regions.

    Every emitted window keeps at least `margin` samples away from any
    transition point (and the trial edges). Majority classes are down-sampled
    so the dataset is class-balanced. With `return_provenance` a third result
    lists each row's (trial index, window start).
    """
    if margin < 0 or stride < 1:
        raise DataError("margin must be >= 0 and stride >= 1")
    per_class = [[] for _ in range(NUM_STATES)]
    for trial_idx, trial in enumerate(trials):
        for state, start, end in trial.segments():
            lo = start + margin
            hi = end - margin - window
            if hi < lo:
                warnings.warn(
                    f"trial {trial_idx}: state {STATE_NAMES[state]} segment too "
                    f"short for window {window} with margin {margin}; skipped"
                )
                continue
            for pos in range(lo, hi + 1, stride):
                per_class[state].append((trial_idx, pos))
    counts = [len(c) for c in per_class]
    if min(counts) == 0:
        missing = [STATE_NAMES[i] for i, c in enumerate(counts) if c == 0]
        warnings.warn(f"no steady windows for state(s): {', '.join(missing)}")
    rng = np.random.default_rng(seed)
    target = min([c for c in counts if c > 0], default=0)
    if max_per_class is not None:
        target = min(target, max_per_class)
    chosen = []
    for state, candidates in enumerate(per_class):
        if not candidates:
            continue
        take = target if balance else min(len(candidates), max_per_class or len(candidates))
        pick = rng.choice(len(candidates), size=take, replace=False)
        chosen.extend((state, *candidates[i]) for i in sorted(pick))
    windows = np.empty((len(chosen), 1, window))
    labels = np.empty(len(chosen), dtype=np.int64)
    for row, (state, trial_idx, pos) in enumerate(chosen):
        windows[row, 0, :] = trials[trial_idx].samples[pos:pos + window]
        labels[row] = state
    if return_provenance:
        return windows, labels, [(t, p) for _, t, p in chosen]
    return windows, labels


def sequence_label(trial, end, span, window=400):
    """7-class label for the span ending (exclusive) at `end`.

    A transition point inside the final window marks the corresponding
    transitioning event (the latest such point wins); otherwise the label is
    the state at the span's final sample.
    """
    if end < span or end > len(trial.samples):
        raise DataError(f"span end {end} out of range")
    event = None
    for i, point in enumerate(trial.transition_points):
        if end - window <= point <= end - 1:
            event = NUM_STATES + i
    if event is not None:
        return event
    return int(trial.labels[end - 1])


def extract_sequence_samples(trials, span=3200, stride=25, window=400,
                             max_per_class=600, balance=True, seed=0,
                             return_provenance=False):
    """Labeled 7-class sequence dataset, stratified across classes.

    Returns (signals (N, span), labels (N,)). Sampling is seeded; with
    `balance` each class is down-sampled to the size of the rarest non-empty
    class (capped by `max_per_class`). With `return_provenance` a third result
    lists each row's (trial index, span end).
    """
    if span % window != 0:
        raise DataError("span must be a multiple of the window length")
    per_class = [[] for _ in range(NUM_STATES + NUM_EVENTS)]
    for trial_idx, trial in enumerate(trials):
        if len(trial.samples) < span:
            raise DataError(f"trial {trial_idx} shorter than span {span}")
        for end in range(span, len(trial.samples) + 1, stride):
            label = sequence_label(trial, end, span, window)
            per_class[label].append((trial_idx, end))
    counts = [len(c) for c in per_class]
    if min(counts) == 0:
        missing = [i for i, c in enumerate(counts) if c == 0]
        warnings.warn(f"no sequence samples for class index(es) {missing}")
    rng = np.random.default_rng(seed)
    target = min([c for c in counts if c > 0], default=0)
    if max_per_class is not None:
        target = min(target, max_per_class)
    chosen = []
    for label, candidates in enumerate(per_class):
        if not candidates:
            continue
        take = target if balance else min(len(candidates), max_per_class or len(candidates))
        pick = rng.choice(len(candidates), size=take, replace=False)
        chosen.extend((label, *candidates[i]) for i in sorted(pick))
    signals = np.empty((len(chosen), span))
    labels = np.empty(len(chosen), dtype=np.int64)
    for row, (label, trial_idx, end) in enumerate(chosen):
        signals[row] = trials[trial_idx].samples[end - span:end]
        labels[row] = label
    if return_provenance:
        return signals, labels, [(t, e) for _, t, e in chosen]
    return signals, labels

"""Metrics, deployment simulation, delay measurement, baseline comparison."""

from dataclasses import dataclass, field

import numpy as np

from .coordinator import Coordinator, OutcomeKind
from .errors import DataError
from .labels import EVENT_FOR_BOUNDARY
from .stream import FilterSpec, StreamPartitioner, WindowingConfig, denoise


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (q, q), rows = truth, columns = prediction
    class_names: tuple

    @classmethod
    def from_predictions(cls, truth, predicted, class_names):
        q = len(class_names)
        truth = np.asarray(truth, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if truth.shape != predicted.shape:
            raise DataError("truth/prediction length mismatch")
        if len(truth) and (truth.min() < 0 or truth.max() >= q
                           or predicted.min() < 0 or predicted.max() >= q):
            raise DataError(f"class index out of range [0, {q})")
        counts = np.zeros((q, q), dtype=np.int64)
        np.add.at(counts, (truth, predicted), 1)
        return cls(counts=counts, class_names=tuple(class_names))

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("truth\\prediction," + ",".join(self.class_names) + "\n")
            for name, row in zip(self.class_names, self.counts):
                fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool  # never true and never predicted; excluded from macros


def precision_recall_f1(cm):
    """Per-class precision/recall/F1 plus macro averages.

    Zero denominators yield 0.0 with the class flagged; a class that is never
    true and never predicted is excluded from the macro averages.
    """
    counts = cm.counts
    per_class = []
    for i, name in enumerate(cm.class_names):
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum()) - tp
        fn = int(counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(
                name=name, precision=precision, recall=recall, f1=f1,
                support=tp + fn, degenerate=(tp + fp + fn == 0),
            )
        )
    scored = [m for m in per_class if not m.degenerate]
    if scored:
        macro = {
            "precision": float(np.mean([m.precision for m in scored])),
            "recall": float(np.mean([m.recall for m in scored])),
            "f1": float(np.mean([m.f1 for m in scored])),
        }
    else:
        macro = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    return per_class, macro


@dataclass
class MatchedDelay:
    kind: tuple          # (from_state, to_state)
    true_time: float
    detected_time: float

    @property
    def delay(self):
        return self.detected_time - self.true_time


@dataclass
class SimulationReport:
    trial_id: str
    config: dict
    decisions: list = field(default_factory=list)
    transitions: list = field(default_factory=list)        # CommittedTransition-like dicts
    matches: list = field(default_factory=list)            # MatchedDelay
    missed_truth: list = field(default_factory=list)       # (kind, true_time)
    false_detections: list = field(default_factory=list)   # (kind, detected_time)
    incidents: list = field(default_factory=list)
    truth: list = field(default_factory=list)              # (kind, true_time)

    @property
    def committed_path(self):
        return [t["target"] for t in self.transitions]

    @property
    def delays(self):
        return [m.delay for m in self.matches]

    def mean_abs_delay(self):
        return float(np.mean([abs(d) for d in self.delays])) if self.delays else float("nan")

    def to_dict(self):
        return {
            "trial_id": self.trial_id,
            "config": self.config,
            "truth": [
                {"kind": list(kind), "time": time} for kind, time in self.truth
            ],
            "decisions": self.decisions,
            "transitions": self.transitions,
            "matches": [
                {
                    "kind": list(m.kind),
                    "true_time": m.true_time,
                    "detected_time": m.detected_time,
                    "delay": m.delay,
                }
                for m in self.matches
            ],
            "missed_truth": [
                {"kind": list(kind), "time": time} for kind, time in self.missed_truth
            ],
            "false_detections": [
                {"kind": list(kind), "time": time} for kind, time in self.false_detections
            ],
            "incidents": self.incidents,
            "summary": {
                "committed_path": self.committed_path,
                "mean_abs_delay": self.mean_abs_delay(),
                "num_incidents": len(self.incidents),
            },
        }


def pair_transitions(detected, truth, horizon):
    """Greedy nearest-match pairing of detections to ground truth.

    detected/truth: [( (from, to), time )]. A detection only matches an
    unmatched true transition of the same kind within `horizon` seconds.
    Returns (matches, missed_truth, false_detections).
    """
    matched_truth = [False] * len(truth)
    matches, false_detections = [], []
    for kind, det_time in sorted(detected, key=lambda item: item[1]):
        best, best_gap = None, None
        for i, (true_kind, true_time) in enumerate(truth):
            if matched_truth[i] or true_kind != kind:
                continue
            gap = abs(det_time - true_time)
            if gap <= horizon and (best_gap is None or gap < best_gap):
                best, best_gap = i, gap
        if best is None:
            false_detections.append((kind, det_time))
        else:
            matched_truth[best] = True
            matches.append(
                MatchedDelay(kind=kind, true_time=truth[best][1], detected_time=det_time)
            )
    missed = [truth[i] for i in range(len(truth)) if not matched_truth[i]]
    return matches, missed, false_detections


def validate_transition_path(fsm, transitions):
    """Independent safety re-check of a committed transition list."""
    state = fsm.initial
    for t in transitions:
        if t["source"] != state:
            raise DataError(
                f"transition from {t['source']!r} but coordinator was in {state!r}"
            )
        if t["event"] not in fsm.gamma(t["source"]):
            raise DataError(f"committed event {t['event']!r} inactive in {t['source']!r}")
        if fsm.target(t["source"], t["event"]) != t["target"]:
            raise DataError(
                f"committed transition {t['source']}->{t['target']} does not "
                "match the transition function"
            )
        state = t["target"]


@dataclass
class EvalConfig:
    epsilon: float = 1.0       # max permitted delay, seconds
    stride: int = 25           # decision stride H, samples
    match_horizon: float = 2.0 # pairing horizon, seconds
    filter_spec: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _trial_truth(trial):
    return [
        ((src, dst), time) for src, dst, _idx, time in trial.transition_times()
    ]


def simulate_deployment(model, fsm, trial, cfg, keep_windows=False, trial_id=None):
    """Stream a trial through partition -> classify -> coordinator.

    Records every decision and outcome, commits transitions through the FSM,
    and pairs committed transitions with ground truth to measure delays.
    """
    if fsm.num_classes != 7:
        raise DataError("FSM class map must cover the 7 classifier classes")
    windowing = WindowingConfig(fs=trial.fs, stride=cfg.stride)
    partitioner = StreamPartitioner(windowing)
    coordinator = Coordinator(fsm)
    signal = denoise(trial.samples, cfg.filter_spec)

    report = SimulationReport(
        trial_id=trial_id if trial_id is not None else f"seed{trial.seed}",
        config={
            "stride": cfg.stride,
            "epsilon": cfg.epsilon,
            "match_horizon": cfg.match_horizon,
            "filter": cfg.filter_spec.kind,
            "model_hash": model.hash(),
            "fs": trial.fs,
        },
        truth=_trial_truth(trial),
    )
    transitions = []
    for seq in partitioner.push(signal):
        scores = model.forward(seq.data, train=False)
        decision = int(np.argmax(scores))
        outcome = coordinator.step(
            decision, seq.end_time, window=seq if keep_windows else None
        )
        report.decisions.append(
            {
                "end_index": seq.end_index,
                "end_time": seq.end_time,
                "decision": decision,
                "class_name": fsm.class_map[decision],
                "outcome": outcome.kind.value,
                "reason": outcome.reason,
            }
        )
        if outcome.kind is OutcomeKind.TRANSITION:
            transitions.append(
                {
                    "source": outcome.state_before,
                    "target": outcome.state_after,
                    "event": outcome.event,
                    "end_time": seq.end_time,
                    "end_index": seq.end_index,
                }
            )
    validate_transition_path(fsm, transitions)
    report.transitions = transitions
    detected = [((t["source"], t["target"]), t["end_time"]) for t in transitions]
    report.matches, report.missed_truth, report.false_detections = pair_transitions(
        detected, report.truth, cfg.match_horizon
    )
    report.incidents = [
        {
            "decision_index": inc.decision_index,
            "end_time": inc.end_time,
            "state": inc.state,
            "proposed": inc.proposed,
            "reason": inc.reason,
            "severity": inc.severity,
        }
        for inc in coordinator.incidents
    ]
    report._coordinator = coordinator
    return report


def baseline_transitions_from_decisions(decisions):
    """Transition inference for a 4-class state-only trace.

    The machine state is taken to be the first decision; each later decision
    that differs from the current state commits a transition immediately.
    Returns [(from_state_idx, to_state_idx, end_time)].
    """
    transitions = []
    state = None
    for decision, end_time in decisions:
        if state is None:
            state = decision
            continue
        if decision != state:
            transitions.append((state, decision, end_time))
            state = decision
    return transitions


def run_baseline(upstream, trial, cfg, state_names, trial_id=None):
    """Deployment simulation for the single-stage 4-class baseline.

    Classifies one 400-sample window per decision stride; transitions are
    inferred at the first window where the argmax state changes (no FSM
    guard). The raw decision trace is retained in the report.
    """
    windowing = WindowingConfig(fs=trial.fs, stride=cfg.stride, sequence_len=1)
    partitioner = StreamPartitioner(windowing)
    signal = denoise(trial.samples, cfg.filter_spec)
    decisions = []
    report = SimulationReport(
        trial_id=trial_id if trial_id is not None else f"seed{trial.seed}",
        config={
            "stride": cfg.stride,
            "epsilon": cfg.epsilon,
            "match_horizon": cfg.match_horizon,
            "filter": cfg.filter_spec.kind,
            "baseline": True,
            "fs": trial.fs,
        },
        truth=_trial_truth(trial),
    )
    for seq in partitioner.push(signal):
        scores = upstream.forward(seq.data, train=False)
        decision = int(np.argmax(scores))
        decisions.append((decision, seq.end_time))
        report.decisions.append(
            {
                "end_index": seq.end_index,
                "end_time": seq.end_time,
                "decision": decision,
                "class_name": state_names[decision],
                "outcome": "baseline",
                "reason": None,
            }
        )
    transitions = baseline_transitions_from_decisions(decisions)
    report.transitions = [
        {
            "source": state_names[src],
            "target": state_names[dst],
            "event": EVENT_FOR_BOUNDARY.get(
                (state_names[src], state_names[dst]), "state-change"
            ),
            "end_time": end_time,
            "end_index": int(round(end_time * trial.fs)),
        }
        for src, dst, end_time in transitions
    ]
    detected = [((t["source"], t["target"]), t["end_time"]) for t in report.transitions]
    report.matches, report.missed_truth, report.false_detections = pair_transitions(
        detected, report.truth, cfg.match_horizon
    )
    return report


def check_delay_budget(report, cfg):
    """Per-transition pass/fail against the SME delay budget epsilon.

    A matched transition fails when its delay exceeds epsilon; every
    unmatched true transition is a failure.
    """
    rows = []
    for m in report.matches:
        rows.append(
            {"kind": m.kind, "delay": m.delay, "ok": m.delay <= cfg.epsilon}
        )
    for kind, true_time in report.missed_truth:
        rows.append({"kind": kind, "delay": None, "ok": False})
    return {"transitions": rows, "passed": all(r["ok"] for r in rows)}


def metrics_table(per_class, macro):
    """Aligned-column text table in the style of a per-class metric report."""
    width = max(len(m.name) for m in per_class) if per_class else 8
    lines = [f"{'class':<{width}}  precision  recall  f1-score  support"]
    for m in per_class:
        flag = "  (degenerate)" if m.degenerate else ""
        lines.append(
            f"{m.name:<{width}}  {m.precision:>9.3f}  {m.recall:>6.3f}"
            f"  {m.f1:>8.3f}  {m.support:>7d}{flag}"
        )
    lines.append(
        f"{'macro avg':<{width}}  {macro['precision']:>9.3f}"
        f"  {macro['recall']:>6.3f}  {macro['f1']:>8.3f}"
    )
    return "\n".join(lines)


def delay_table(reports, kinds):
    """Rows = transition kinds, columns = trials; entries in seconds."""
    header = ["transition".ljust(28)] + [f"{r.trial_id:>12}" for r in reports]
    lines = ["  ".join(header)]
    for kind in kinds:
        row = [f"{kind[0]}->{kind[1]}".ljust(28)]
        for r in reports:
            match = next((m for m in r.matches if m.kind == kind), None)
            if match is None:
                row.append(f"{'miss':>12}")
            else:
                row.append(f"{match.delay:>12.3f}")
        lines.append("  ".join(row))
    return "\n".join(lines)

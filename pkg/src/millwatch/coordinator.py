"""SME-defined finite state machine supervising the classifier's decisions.

Each decision (the argmax class of the 7 scores) names either an interactive
state or a transitioning event. The coordinator holds on the current state,
commits a transition only when an active, defined event arrives, and records
every rejected proposal as an incident for SME review and retraining.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

from .errors import DataError, FsmDefinitionError
from .stream import WindowSequence

REASON_STATE_JUMP = "state-jump"
REASON_INACTIVE_EVENT = "inactive-event"
REASON_UNDEFINED_TRANSITION = "undefined-transition"


@dataclass(frozen=True)
class FsmDefinition:
    states: tuple
    events: tuple
    initial: str
    transitions: dict           # (state, event) -> state
    active: dict                # state -> frozenset of events
    class_map: dict             # classifier class index -> state or event name

    def validate(self):
        if not self.states:
            raise FsmDefinitionError("state set is empty")
        if len(set(self.states)) != len(self.states):
            raise FsmDefinitionError("duplicate state names")
        if len(set(self.events)) != len(self.events):
            raise FsmDefinitionError("duplicate event names")
        if set(self.states) & set(self.events):
            raise FsmDefinitionError("state and event names must be disjoint")
        if self.initial not in self.states:
            raise FsmDefinitionError(f"initial state {self.initial!r} not declared")
        for (state, event), target in self.transitions.items():
            for name, role in ((state, "source state"), (target, "target state")):
                if name not in self.states:
                    raise FsmDefinitionError(
                        f"transition ({state!r}, {event!r}) -> {target!r}: "
                        f"{role} {name!r} not declared"
                    )
            if event not in self.events:
                raise FsmDefinitionError(
                    f"transition ({state!r}, {event!r}): event not declared"
                )
        for state in self.active:
            if state not in self.states:
                raise FsmDefinitionError(f"active_events key {state!r} not a state")
            for event in self.active[state]:
                if event not in self.events:
                    raise FsmDefinitionError(
                        f"active_events[{state!r}] names unknown event {event!r}"
                    )
        for (state, event) in self.transitions:
            if event not in self.active.get(state, frozenset()):
                raise FsmDefinitionError(
                    f"transition ({state!r}, {event!r}) defined but the event is "
                    f"not active in {state!r} (active-event function inconsistent "
                    "with the transition function)"
                )
        names = set(self.states) | set(self.events)
        q = len(self.class_map)
        if sorted(self.class_map) != list(range(q)):
            raise FsmDefinitionError("class_map keys must be 0..q-1")
        values = list(self.class_map.values())
        if len(set(values)) != len(values):
            raise FsmDefinitionError("class_map maps two classes to the same name")
        unknown = [v for v in values if v not in names]
        if unknown:
            raise FsmDefinitionError(f"class_map names unknown symbols {unknown}")
        if set(values) != names:
            missing = sorted(names - set(values))
            raise FsmDefinitionError(
                f"class_map must cover every state and event; missing {missing}"
            )
        return self

    def gamma(self, state):
        return self.active.get(state, frozenset())

    def target(self, state, event):
        return self.transitions.get((state, event))

    @property
    def num_classes(self):
        return len(self.class_map)


def fsm_from_dict(doc):
    try:
        states = tuple(doc["states"])
        events = tuple(doc["events"])
        initial = doc["initial"]
        raw_transitions = doc["transitions"]
        raw_class_map = doc["class_map"]
    except (KeyError, TypeError) as exc:
        raise FsmDefinitionError(f"FSM definition missing field: {exc}")
    transitions = {}
    for i, entry in enumerate(raw_transitions):
        try:
            key = (entry["from"], entry["event"])
        except (KeyError, TypeError):
            raise FsmDefinitionError(f"transitions[{i}] needs from/event/to fields")
        if key in transitions:
            raise FsmDefinitionError(
                f"transitions[{i}]: duplicate (state, event) pair {key}"
            )
        transitions[key] = entry.get("to")
    if "active_events" in doc:
        active = {
            state: frozenset(evts) for state, evts in doc["active_events"].items()
        }
    else:
        active = {}
        for (state, event) in transitions:
            active.setdefault(state, set()).add(event)
        active = {state: frozenset(evts) for state, evts in active.items()}
    try:
        class_map = {int(k): v for k, v in raw_class_map.items()}
    except (TypeError, ValueError):
        raise FsmDefinitionError("class_map keys must be integers")
    return FsmDefinition(
        states=states, events=events, initial=initial,
        transitions=transitions, active=active, class_map=class_map,
    ).validate()


def load_fsm(path):
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FsmDefinitionError(f"{path}: invalid JSON ({exc})")
    return fsm_from_dict(doc)


def milling_fsm():
    """The shipped 4-state / 3-event milling definition."""
    with resources.files("millwatch.data").joinpath("milling.json").open() as fh:
        return fsm_from_dict(json.load(fh))


class OutcomeKind(Enum):
    HOLD = "hold"
    TRANSITION = "transition"
    REJECTED = "rejected"


@dataclass
class Incident:
    decision_index: int
    end_time: float
    state: str
    proposed: str
    reason: str
    severity: str = "error"
    window: WindowSequence | None = None


@dataclass
class StepOutcome:
    kind: OutcomeKind
    state_before: str
    state_after: str
    event: str | None = None
    end_time: float | None = None
    incident: Incident | None = None

    @property
    def reason(self):
        return self.incident.reason if self.incident else None


@dataclass
class CommittedTransition:
    source: str
    target: str
    event: str
    end_time: float
    decision_index: int


class Coordinator:
    """Sequential decision checker; one instance per stream."""

    def __init__(self, fsm, max_incidents=1000):
        fsm.validate()
        self.fsm = fsm
        self.state = fsm.initial
        self.last_event = None
        self.last_transition_time = None
        self.decision_count = 0
        self.max_incidents = max_incidents
        self.incidents = []
        self.dropped_incidents = 0

    def _record(self, incident):
        if len(self.incidents) >= self.max_incidents:
            self.incidents.pop(0)
            self.dropped_incidents += 1
        self.incidents.append(incident)

    def step(self, decision, end_time, window=None):
        """Apply one classifier decision (class index) observed at end_time."""
        if decision not in self.fsm.class_map:
            raise ValueError(f"decision class {decision} not in the FSM class map")
        name = self.fsm.class_map[decision]
        index = self.decision_count
        self.decision_count += 1
        before = self.state

        def reject(reason, severity="error"):
            incident = Incident(
                decision_index=index, end_time=end_time, state=before,
                proposed=name, reason=reason, severity=severity, window=window,
            )
            self._record(incident)
            return StepOutcome(
                kind=OutcomeKind.REJECTED, state_before=before, state_after=before,
                end_time=end_time, incident=incident,
            )

        if name in self.fsm.states:
            if name == before:
                return StepOutcome(
                    kind=OutcomeKind.HOLD, state_before=before, state_after=before,
                    end_time=end_time,
                )
            return reject(REASON_STATE_JUMP)

        # transitioning event
        if name not in self.fsm.gamma(before):
            # an event that was just committed keeps being proposed for a few
            # strides while its window slides past; log those more quietly
            severity = "repeat" if name == self.last_event else "error"
            return reject(REASON_INACTIVE_EVENT, severity=severity)
        target = self.fsm.target(before, name)
        if target is None:
            return reject(REASON_UNDEFINED_TRANSITION)
        self.state = target
        self.last_event = name
        self.last_transition_time = end_time
        return StepOutcome(
            kind=OutcomeKind.TRANSITION, state_before=before, state_after=target,
            event=name, end_time=end_time,
        )


def export_incidents(coordinator, path):
    """Write incidents with their raw windows in the labeled-archive format.

    Each record carries a `label=?` placeholder an SME can correct; the
    archive then feeds the retraining loop via load_incident_archive.
    """
    incidents = coordinator.incidents
    with open(path, "w", newline="\n") as fh:
        fh.write("# millwatch-incidents v1\n")
        fh.write(f"# count={len(incidents)} dropped={coordinator.dropped_incidents}\n")
        for inc in incidents:
            fs = float(inc.window.fs) if inc.window is not None else 0.0
            fh.write(
                f"# incident index={inc.decision_index} end_time={float(inc.end_time)!r}"
                f" state={inc.state} proposed={inc.proposed} reason={inc.reason}"
                f" severity={inc.severity} fs={fs!r} label=?\n"
            )
            if inc.window is not None:
                for value in inc.window.flat():
                    fh.write(f"{float(value)!r}\n")


@dataclass
class IncidentRecord:
    meta: dict
    samples: np.ndarray
    label: str


def load_incident_archive(path):
    """Parse an incident archive back into records."""
    records = []
    meta = None
    samples = []

    def flush():
        if meta is not None:
            records.append(
                IncidentRecord(
                    meta=dict(meta),
                    samples=np.asarray(samples, dtype=np.float64),
                    label=meta.get("label", "?"),
                )
            )

    with open(path, "r") as fh:
        first = fh.readline().rstrip("\n")
        if first != "# millwatch-incidents v1":
            raise DataError(f"{path}: not an incident archive")
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("# incident"):
                flush()
                meta = {}
                samples = []
                for token in line[len("# incident"):].split():
                    if "=" not in token:
                        raise DataError(f"{path}: malformed incident header {line!r}")
                    key, value = token.split("=", 1)
                    meta[key] = value
                continue
            if line.startswith("#"):
                continue
            if meta is None:
                raise DataError(f"{path}: sample data before any incident header")
            samples.append(float(line))
    flush()
    return records


def labeled_incidents_to_dataset(records, class_index):
    """Convert SME-labeled records to (signals, labels) for retraining;
    records still carrying the `?` placeholder are skipped."""
    signals, labels = [], []
    for rec in records:
        if rec.label == "?":
            continue
        if rec.label not in class_index:
            raise DataError(f"incident label {rec.label!r} is not a known class")
        signals.append(rec.samples)
        labels.append(class_index[rec.label])
    if signals:
        return np.stack(signals), np.asarray(labels, dtype=np.int64)
    return np.empty((0, 0)), np.empty((0,), dtype=np.int64)

"""Canonical class names shared by the generator, the classifier, and the FSM.

The 7-class output space is 4 interactive states followed by 3 transitioning
events. Indices are fixed so datasets, the shipped FSM definition, and report
tables all agree.
"""

STATE_NAMES = (
    "no_interaction",
    "entry",
    "constant_milling",
    "exit",
)

EVENT_NAMES = (
    "no_interaction_to_entry",
    "entry_to_constant_milling",
    "constant_milling_to_exit",
)

CLASS_NAMES = STATE_NAMES + EVENT_NAMES

NUM_STATES = len(STATE_NAMES)
NUM_EVENTS = len(EVENT_NAMES)
NUM_CLASSES = len(CLASS_NAMES)

STATE_INDEX = {name: i for i, name in enumerate(STATE_NAMES)}
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

# Event i marks the boundary between state i and state i+1.
EVENT_FOR_BOUNDARY = {
    (STATE_NAMES[i], STATE_NAMES[i + 1]): EVENT_NAMES[i] for i in range(NUM_EVENTS)
}
BOUNDARY_FOR_EVENT = {v: k for k, v in EVENT_FOR_BOUNDARY.items()}

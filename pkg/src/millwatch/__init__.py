"""millwatch: streaming machine-part interaction classification.

A sliding-window signal pipeline feeds a two-stage CNN (per-window encoder +
trajectory classifier); an SME-defined finite state machine validates each
decision, committing legal transitions and recording incidents. A synthetic
milling-signal generator provides labeled data for both training stages, and
the evaluation module replays full recordings as deployment simulations.
"""

__version__ = "0.1.0"

from . import coordinator, evalsim, labels, model, nn, stream, synthgen

__all__ = [
    "coordinator",
    "evalsim",
    "labels",
    "model",
    "nn",
    "stream",
    "synthgen",
]

"""Python access to the DQEN C++ core.

Configurations cross the boundary as JSON; the helpers here accept and
return plain dicts.
"""

import json

from . import _dqen
from ._dqen import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    average_precision,
    giou,
    hungarian,
    iou,
    select_candidates,
    text_label,
    training_free_scores,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "average_precision",
    "default_config",
    "giou",
    "hungarian",
    "iou",
    "resolve_config",
    "run_synthetic",
    "select_candidates",
    "selftest",
    "text_label",
    "training_free_scores",
]


def default_config():
    return json.loads(_dqen.default_config())


def resolve_config(config=None, overrides=()):
    """Validate a (partial) config dict and apply "section.key=value" overrides."""
    return json.loads(_dqen.resolve_config(json.dumps(config or {}), list(overrides)))


def run_synthetic(config):
    """Generate the configured synthetic world, train on it and report mAP."""
    return _dqen.run_synthetic(json.dumps(config))


def selftest(filter=""):
    """Run the invariant suites; returns (passed, report text)."""
    return _dqen.selftest(filter)

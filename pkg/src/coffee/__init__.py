"""Desk-scale lab for event-sequence CTR models.

Generates seeded synthetic engagement worlds, trains a cross-attention
sequence model on them, measures per-source scaling-curve ROI, and
explains predictions through the attention weights.
"""

from .events import (
    Event,
    EventSequence,
    SourceType,
    TimeWindow,
    build_event_sequence,
    build_schemas,
    read_event_log,
    validate_event,
    write_event_log,
)
from .metrics import (
    EvalBatch,
    RoiRow,
    ScalingCurve,
    best_fit_slope,
    curve_auc,
    ne_gain,
    normalized_entropy,
    roc_auc,
)
from .model import ModelConfig, encode_timestamp, forward, init_params
from .trainer import TrainConfig, evaluate, split_examples, train
from .world import (
    WorldConfig,
    generate_requests,
    generate_world,
    simulate_events,
    simulate_labels,
)

__all__ = [
    "Event",
    "EventSequence",
    "SourceType",
    "TimeWindow",
    "build_event_sequence",
    "build_schemas",
    "read_event_log",
    "validate_event",
    "write_event_log",
    "EvalBatch",
    "RoiRow",
    "ScalingCurve",
    "best_fit_slope",
    "curve_auc",
    "ne_gain",
    "normalized_entropy",
    "roc_auc",
    "ModelConfig",
    "encode_timestamp",
    "forward",
    "init_params",
    "TrainConfig",
    "evaluate",
    "split_examples",
    "train",
    "WorldConfig",
    "generate_requests",
    "generate_world",
    "simulate_events",
    "simulate_labels",
]

__version__ = "0.1.0"

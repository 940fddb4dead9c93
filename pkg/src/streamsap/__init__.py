"""Latency-aware streaming perception benchmark: sAP / K-step sAP evaluation,
discrete-event pipeline simulation and numpy reference kernels."""

from __future__ import annotations

from .geometry import giou, giou_loss, giou_loss_grad, iou
from .matching import APReport, average_precision, evaluate, match_frame
from .model import (
    BoundingBox,
    DegenerateGeometryError,
    Detection,
    EmittedResult,
    FrameTruth,
    InvariantError,
    ResultTimeline,
    StreamScenario,
    TruthObject,
    WindowSpec,
    make_window,
)
from .streaming import KStepReport, StreamMode, StreamPolicy, associate, streaming_ap

__version__ = "0.1.0"

__all__ = [
    "APReport",
    "BoundingBox",
    "DegenerateGeometryError",
    "Detection",
    "EmittedResult",
    "FrameTruth",
    "InvariantError",
    "KStepReport",
    "ResultTimeline",
    "StreamMode",
    "StreamPolicy",
    "StreamScenario",
    "TruthObject",
    "WindowSpec",
    "associate",
    "average_precision",
    "evaluate",
    "giou",
    "giou_loss",
    "giou_loss_grad",
    "iou",
    "make_window",
    "match_frame",
    "streaming_ap",
]

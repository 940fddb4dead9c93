"""Core value types for streaming evaluation: boxes, detections, streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

DEFAULT_FRAME_PERIOD = 1.0 / 30.0


class DegenerateGeometryError(ValueError):
    """Raised when an operation needs a box with non-zero area."""


class InvariantError(ValueError):
    """A value violates a documented invariant of the data model."""


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantError(f"non-finite box coordinates {vals}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise InvariantError(f"inverted box {vals}")
        # annotation integers are promoted so arithmetic is always float
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        if w < 0 or h < 0:
            raise InvariantError(f"negative box extent w={w} h={h}")
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clip(self, width: float, height: float) -> "BoundingBox | None":
        """Clip to the image rectangle; ``None`` if nothing is left."""
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1, y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    category: int
    score: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise InvariantError(f"score {self.score} outside [0, 1]")
        if self.category < 0:
            raise InvariantError(f"negative category id {self.category}")


@dataclass(frozen=True)
class TruthObject:
    bbox: BoundingBox
    category: int
    area: float | None = None
    ignore: bool = False

    @property
    def effective_area(self) -> float:
        return self.bbox.area if self.area is None else self.area


@dataclass(frozen=True)
class FrameTruth:
    frame_index: int
    timestamp: float
    objects: tuple[TruthObject, ...] = ()


@dataclass(frozen=True)
class StreamScenario:
    frame_period: float
    frames: tuple[FrameTruth, ...]
    categories: Mapping[int, str] = field(default_factory=dict)
    sequence_id: str = "seq0"
    image_size: tuple[int, int] | None = None  # (width, height)

    def __post_init__(self) -> None:
        if not self.frame_period > 0:
            raise InvariantError("frame_period must be positive")
        for i, fr in enumerate(self.frames):
            if fr.frame_index != i:
                raise InvariantError(
                    f"sequence {self.sequence_id!r}: frame {i} has index {fr.frame_index}"
                )
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)

    def time_of(self, frame_index: int) -> float:
        return frame_index * self.frame_period


@dataclass(frozen=True)
class WindowSpec:
    n_support: int = 0
    step: int = 1

    def __post_init__(self) -> None:
        if self.n_support < 0:
            raise InvariantError("n_support must be >= 0")
        if self.step < 1:
            raise InvariantError("step must be >= 1")

    @property
    def span(self) -> int:
        """Number of frames of history the window reaches back."""
        return self.n_support * self.step


@dataclass(frozen=True)
class EmittedResult:
    source_frame: int
    horizon: int
    detections: tuple[Detection, ...]
    emit_time: float

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise InvariantError("horizon must be >= 1")
        if not math.isfinite(self.emit_time):
            raise InvariantError("emit_time must be finite")
        object.__setattr__(self, "detections", tuple(self.detections))

    @property
    def target_frame(self) -> int:
        return self.source_frame + self.horizon


@dataclass(frozen=True)
class ResultTimeline:
    sequence_id: str
    results: tuple[EmittedResult, ...] = ()
    deadline_misses: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "results", tuple(self.results))
        for a, b in zip(self.results, self.results[1:]):
            if b.emit_time < a.emit_time:
                raise InvariantError("timeline emit_time must be non-decreasing")


def make_window(scenario: StreamScenario, t: int, spec: WindowSpec) -> list[int]:
    """Frame indices ``[t, t-step, ..., t-N*step]``, clamped at 0."""
    if not 0 <= t < len(scenario.frames):
        raise IndexError(f"frame {t} outside sequence of {len(scenario.frames)} frames")
    return [max(t - i * spec.step, 0) for i in range(spec.n_support + 1)]


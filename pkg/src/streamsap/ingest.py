"""Annotation/result loaders and the synthetic scenario generator."""

from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .model import (
    DEFAULT_FRAME_PERIOD,
    BoundingBox,
    Detection,
    EmittedResult,
    FrameTruth,
    InvariantError,
    ResultTimeline,
    StreamScenario,
    TruthObject,
)

# tolerance for emit_time earlier than the source frame's own timestamp
EMIT_TOLERANCE = 1e-6


class ParseError(ValueError):
    """Malformed input file; the message names the offending location."""


def _read_json(source) -> Any:
    if isinstance(source, (dict, list)):
        return source
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None


def _get(d: Mapping, key: str, where: str):
    if not isinstance(d, Mapping):
        raise ParseError(f"{where}: expected an object")
    if key not in d:
        raise ParseError(f"{where}: missing field {key!r}")
    return d[key]


def _xywh(raw, where: str) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(f"{where}: bbox must be [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in raw)
        return BoundingBox.from_xywh(x, y, w, h)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


# -- COCO-style streams ----------------------------------------------------


def load_coco_stream(
    source,
    sequence_key: str = "sid",
    frame_key: str = "fid",
    frame_period: float | None = None,
) -> list[StreamScenario]:
    """One scenario per sequence tag, frames ordered by frame index."""
    try:
        return _load_coco(_read_json(source), sequence_key, frame_key, frame_period)
    except ParseError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"{source if not isinstance(source, dict) else '<dict>'}: {exc}") from None


def _load_coco(doc, sequence_key: str, frame_key: str, frame_period: float | None) -> list[StreamScenario]:
    period = frame_period or doc.get("frame_period", DEFAULT_FRAME_PERIOD)
    categories = {}
    for i, cat in enumerate(_get(doc, "categories", "root")):
        categories[int(_get(cat, "id", f"categories[{i}]"))] = str(cat.get("name", ""))

    images = {}
    for i, img in enumerate(_get(doc, "images", "root")):
        where = f"images[{i}]"
        images[_get(img, "id", where)] = (
            str(_get(img, sequence_key, where)),
            int(_get(img, frame_key, where)),
            img.get("width"),
            img.get("height"),
        )

    objects: dict[Any, list[TruthObject]] = defaultdict(list)
    for i, ann in enumerate(_get(doc, "annotations", "root")):
        where = f"annotations[{i}]"
        image_id = _get(ann, "image_id", where)
        if image_id not in images:
            raise ParseError(f"{where}: unknown image_id {image_id!r}")
        cat = int(_get(ann, "category_id", where))
        if cat not in categories:
            raise ParseError(f"{where}: unknown category_id {cat}")
        box = _xywh(_get(ann, "bbox", where), f"{where}.bbox")
        area = ann.get("area")
        _, _, width, height = images[image_id]
        if width and height:
            clipped = box.clip(float(width), float(height))
            if clipped is None:
                continue
            if clipped != box:
                # a stored area describes the unclipped box
                box, area = clipped, None
        ignore = bool(ann.get("ignore", False) or ann.get("iscrowd", False))
        objects[image_id].append(TruthObject(box, cat, None if area is None else float(area), ignore))

    by_seq: dict[str, list[tuple[int, Any]]] = defaultdict(list)
    sizes: dict[str, tuple[int, int]] = {}
    for image_id, (sid, fid, w, h) in images.items():
        by_seq[sid].append((fid, image_id))
        if w and h:
            sizes[sid] = (int(w), int(h))

    scenarios = []
    for sid in sorted(by_seq):
        entries = sorted(by_seq[sid], key=lambda e: e[0])
        fids = [e[0] for e in entries]
        if fids != list(range(len(fids))):
            raise ParseError(f"sequence {sid!r}: frame indices must run 0..{len(fids) - 1}, got {fids[:8]}...")
        frames = tuple(
            FrameTruth(fid, fid * period, tuple(objects.get(image_id, ()))) for fid, image_id in entries
        )
        scenarios.append(StreamScenario(period, frames, dict(categories), sid, sizes.get(sid)))
    return scenarios


def write_coco_stream(scenarios: Sequence[StreamScenario], path, sequence_key="sid", frame_key="fid") -> None:
    categories: dict[int, str] = {}
    images, annotations = [], []
    for sc in scenarios:
        categories.update(sc.categories)
        for fr in sc.frames:
            image_id = len(images)
            img = {"id": image_id, sequence_key: sc.sequence_id, frame_key: fr.frame_index}
            if sc.image_size:
                img["width"], img["height"] = sc.image_size
            images.append(img)
            for obj in fr.objects:
                ann = {
                    "id": len(annotations),
                    "image_id": image_id,
                    "bbox": list(obj.bbox.to_xywh()),
                    "category_id": obj.category,
                    "ignore": int(obj.ignore),
                }
                if obj.area is not None:
                    ann["area"] = obj.area
                annotations.append(ann)
    doc = {
        "frame_period": scenarios[0].frame_period if scenarios else DEFAULT_FRAME_PERIOD,
        "categories": [{"id": k, "name": v} for k, v in sorted(categories.items())],
        "images": images,
        "annotations": annotations,
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


# -- results timelines -----------------------------------------------------


def _detection(raw, where: str) -> Detection:
    box = _xywh(_get(raw, "bbox", where), f"{where}.bbox")
    cat = int(_get(raw, "category_id", where))
    score = float(_get(raw, "score", where))
    if not 0.0 <= score <= 1.0:
        raise InvariantError(f"{where}: score {score} outside [0, 1]")
    return Detection(box, cat, score)


def load_results(source, frame_period: float | None = None) -> dict[str, ResultTimeline]:
    """Load emitted results, grouped per sequence and sorted by emit time.

    Records may omit ``sequence_id`` (single-sequence files). With a known
    ``frame_period`` a result emitted before its source frame arrived is
    rejected.
    """
    doc = _read_json(source)
    if not isinstance(doc, list):
        raise ParseError("results file must be a JSON list of records")
    grouped: dict[str, list[EmittedResult]] = defaultdict(list)
    for i, rec in enumerate(doc):
        where = f"[{i}]"
        try:
            source_frame = int(_get(rec, "source_frame", where))
            horizon = int(_get(rec, "horizon", where))
            emit_time = float(_get(rec, "emit_time", where))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"{where}: {exc}") from None
        if source_frame < 0 or horizon < 1 or not math.isfinite(emit_time):
            raise InvariantError(f"{where}: invalid source_frame/horizon/emit_time")
        if frame_period is not None and emit_time < source_frame * frame_period - EMIT_TOLERANCE:
            raise InvariantError(
                f"{where}: emit_time {emit_time} precedes source frame {source_frame} arrival"
            )
        dets = tuple(
            _detection(d, f"{where}.detections[{j}]")
            for j, d in enumerate(_get(rec, "detections", where))
        )
        grouped[str(rec.get("sequence_id", ""))].append(EmittedResult(source_frame, horizon, dets, emit_time))
    return {
        sid: ResultTimeline(sid, tuple(sorted(rs, key=lambda r: (r.emit_time, r.source_frame, r.horizon))))
        for sid, rs in grouped.items()
    }


def results_to_records(timelines: Iterable[ResultTimeline]) -> list[dict]:
    records = []
    for tl in timelines:
        for r in tl.results:
            records.append(
                {
                    "sequence_id": tl.sequence_id,
                    "source_frame": r.source_frame,
                    "horizon": r.horizon,
                    "emit_time": r.emit_time,
                    "detections": [
                        {"bbox": list(d.bbox.to_xywh()), "category_id": d.category, "score": d.score}
                        for d in r.detections
                    ],
                }
            )
    return records


def save_results(timelines: Iterable[ResultTimeline], path) -> None:
    Path(path).write_text(json.dumps(results_to_records(timelines), indent=1), encoding="utf-8")


# -- synthetic scenarios ---------------------------------------------------


@dataclass(frozen=True)
class ObjectSpec:
    category: int
    bbox: tuple[float, float, float, float]  # initial [x, y, w, h]
    velocity: tuple[float, float] = (0.0, 0.0)  # px / frame
    acceleration: tuple[float, float] = (0.0, 0.0)  # px / frame^2
    spawn: int = 0
    despawn: int | None = None  # exclusive; None -> end of sequence


@dataclass(frozen=True)
class ScenarioSpec:
    frame_count: int
    objects: tuple[ObjectSpec, ...]
    frame_period: float = DEFAULT_FRAME_PERIOD
    image_size: tuple[int, int] = (1920, 1200)
    seed: int = 0
    sequence_id: str = "synthetic"
    categories: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.frame_count < 1:
            raise InvariantError("frame_count must be >= 1")
        for i, o in enumerate(self.objects):
            end = self.frame_count if o.despawn is None else o.despawn
            if not 0 <= o.spawn < end <= self.frame_count:
                raise InvariantError(f"object {i}: need 0 <= spawn < despawn <= frame_count")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        objs = []
        for i, o in enumerate(_get(d, "objects", "spec")):
            where = f"objects[{i}]"
            objs.append(
                ObjectSpec(
                    category=int(o.get("category", 0)),
                    bbox=tuple(float(v) for v in _get(o, "bbox", where)),
                    velocity=tuple(float(v) for v in o.get("velocity", (0.0, 0.0))),
                    acceleration=tuple(float(v) for v in o.get("acceleration", (0.0, 0.0))),
                    spawn=int(o.get("spawn", 0)),
                    despawn=o.get("despawn"),
                )
            )
        cats = {int(k): str(v) for k, v in d.get("categories", {}).items()}
        return cls(
            frame_count=int(_get(d, "frame_count", "spec")),
            objects=tuple(objs),
            frame_period=float(d.get("frame_period", DEFAULT_FRAME_PERIOD)),
            image_size=tuple(d.get("image_size", (1920, 1200))),
            seed=int(d.get("seed", 0)),
            sequence_id=str(d.get("sequence_id", "synthetic")),
            categories=cats,
        )


def generate_scenario(spec: ScenarioSpec) -> StreamScenario:
    """Materialize constant-acceleration objects frame by frame.

    An object's box at frame ``f`` is its initial box moved by
    ``v*dt + a*dt^2/2`` with ``dt = f - spawn``, clipped to the image and
    dropped for frames where nothing of it remains visible.
    """
    width, height = spec.image_size
    per_frame: list[list[TruthObject]] = [[] for _ in range(spec.frame_count)]
    for i, o in enumerate(spec.objects):
        x, y, w, h = o.bbox
        start = BoundingBox.from_xywh(x, y, w, h)
        end = spec.frame_count if o.despawn is None else o.despawn
        visible = False
        for f in range(o.spawn, end):
            dt = f - o.spawn
            dx = o.velocity[0] * dt + 0.5 * o.acceleration[0] * dt * dt
            dy = o.velocity[1] * dt + 0.5 * o.acceleration[1] * dt * dt
            box = start.translate(dx, dy).clip(width, height)
            if box is not None:
                per_frame[f].append(TruthObject(box, o.category))
                visible = True
        if not visible:
            warnings.warn(f"object {i} is outside the image for its whole life", stacklevel=2)
    categories = dict(spec.categories) or {c: f"class{c}" for c in sorted({o.category for o in spec.objects})}
    frames = tuple(
        FrameTruth(f, f * spec.frame_period, tuple(objs)) for f, objs in enumerate(per_frame)
    )
    return StreamScenario(spec.frame_period, frames, categories, spec.sequence_id, tuple(spec.image_size))


def load_scenario_specs(source) -> list[ScenarioSpec]:
    doc = _read_json(source)
    items = doc if isinstance(doc, list) else [doc]
    try:
        return [ScenarioSpec.from_dict(d) for d in items]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"scenario spec: {exc}") from None

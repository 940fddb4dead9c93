"""COCO-style detection matching and 101-point interpolated AP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import iou as box_iou
from .model import DegenerateGeometryError, Detection, TruthObject

IOU_THRESHOLDS = np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1)
RECALL_POINTS = np.linspace(0.0, 1.0, int(np.round(1.0 / 0.01)) + 1)
SMALL_AREA = 32.0**2
LARGE_AREA = 96.0**2
AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, SMALL_AREA),
    "medium": (SMALL_AREA, LARGE_AREA),
    "large": (LARGE_AREA, math.inf),
}

FramePair = tuple[Sequence[Detection], Sequence[TruthObject]]


@dataclass(frozen=True)
class MatchRecord:
    det_index: int
    truth_index: int | None
    iou: float
    is_true_positive: bool
    score: float
    ignored: bool = False


@dataclass
class APReport:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None
    per_category: dict[int, float | None] = field(default_factory=dict)
    ap_per_threshold: list[float | None] = field(default_factory=list)
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def headline(self) -> dict[str, float | None]:
        return {
            "sAP": self.ap,
            "sAP50": self.ap50,
            "sAP75": self.ap75,
            "sAPs": self.ap_small,
            "sAPm": self.ap_medium,
            "sAPl": self.ap_large,
        }

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_category": {str(k): v for k, v in sorted(self.per_category.items())},
            "ap_per_threshold": list(self.ap_per_threshold),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "APReport":
        return cls(
            ap=d["ap"],
            ap50=d["ap50"],
            ap75=d["ap75"],
            ap_small=d["ap_small"],
            ap_medium=d["ap_medium"],
            ap_large=d["ap_large"],
            per_category={int(k): v for k, v in d.get("per_category", {}).items()},
            ap_per_threshold=list(d.get("ap_per_threshold", [])),
            tp=d.get("tp", 0),
            fp=d.get("fp", 0),
            fn=d.get("fn", 0),
        )


def _in_range(area: float, rng: tuple[float, float]) -> bool:
    return rng[0] <= area < rng[1]


def _safe_iou(a, b) -> float:
    try:
        return box_iou(a, b)
    except DegenerateGeometryError:
        return 0.0


def _prepare(
    dets: Sequence[Detection],
    truths: Sequence[TruthObject],
    category: int,
    max_dets: int | None,
) -> tuple[list[tuple[int, Detection]], list[tuple[int, TruthObject]], np.ndarray]:
    d = [(i, det) for i, det in enumerate(dets) if det.category == category]
    d.sort(key=lambda item: -item[1].score)  # stable: ties keep input order
    if max_dets is not None:
        d = d[:max_dets]
    g = [(j, obj) for j, obj in enumerate(truths) if obj.category == category]
    ious = np.zeros((len(d), len(g)))
    for a, (_, det) in enumerate(d):
        for b, (_, obj) in enumerate(g):
            ious[a, b] = _safe_iou(det.bbox, obj.bbox)
    return d, g, ious


def _greedy(
    d: list[tuple[int, Detection]],
    g: list[tuple[int, TruthObject]],
    ious: np.ndarray,
    threshold: float,
    area_range: tuple[float, float],
) -> tuple[list[MatchRecord], int]:
    ignore = [obj.ignore or not _in_range(obj.effective_area, area_range) for _, obj in g]
    # non-ignored truths are tried first so a det only falls back to an ignored one
    order = sorted(range(len(g)), key=lambda b: ignore[b])
    taken = [False] * len(g)
    records = []
    for a, (di, det) in enumerate(d):
        best, best_iou = None, min(threshold, 1.0 - 1e-10)
        for b in order:
            if taken[b]:
                continue
            if best is not None and not ignore[best] and ignore[b]:
                break
            if ious[a, b] < best_iou:
                continue
            best, best_iou = b, ious[a, b]
        if best is None:
            records.append(
                MatchRecord(
                    det_index=di,
                    truth_index=None,
                    iou=float(ious[a].max()) if len(g) else 0.0,
                    is_true_positive=False,
                    score=det.score,
                    ignored=not _in_range(det.bbox.area, area_range),
                )
            )
        else:
            taken[best] = True
            records.append(
                MatchRecord(
                    det_index=di,
                    truth_index=g[best][0],
                    iou=float(best_iou),
                    is_true_positive=not ignore[best],
                    score=det.score,
                    ignored=ignore[best],
                )
            )
    n_truths = sum(1 for flag in ignore if not flag)
    return records, n_truths


def match_frame(
    dets: Sequence[Detection],
    truths: Sequence[TruthObject],
    iou_threshold: float,
    category: int,
    area_range: tuple[float, float] = AREA_RANGES["all"],
    max_dets: int | None = None,
) -> list[MatchRecord]:
    """Greedily match one frame's detections of ``category`` to its truths.

    Detections are visited in descending score order. Each claims the
    still-unmatched truth with the highest IoU at or above the threshold.
    Matches to ignore-flagged truths (or truths outside ``area_range``) are
    marked ``ignored`` and count as neither TP nor FP.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
    d, g, ious = _prepare(dets, truths, category, max_dets)
    records, _ = _greedy(d, g, ious, iou_threshold, area_range)
    return records


def average_precision(records: Iterable[MatchRecord], n_truths: int) -> float | None:
    """101-point interpolated AP over pooled match records.

    Returns ``None`` when there is neither a truth nor a detection, and 0.0
    when detections exist but no truths do.
    """
    if n_truths < 0:
        raise ValueError("n_truths must be >= 0")
    recs = [r for r in records if not r.ignored]
    if n_truths == 0:
        return 0.0 if recs else None
    if not recs:
        return 0.0
    scores = np.array([-r.score for r in recs])
    order = np.argsort(scores, kind="mergesort")
    tp_flags = np.array([recs[i].is_true_positive for i in order], dtype=float)
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1.0 - tp_flags)
    recall = tp / n_truths
    precision = tp / (tp + fp)
    # precision envelope: best precision at any equal-or-higher recall
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(
    pairs: Sequence[FramePair],
    categories: Iterable[int] | None = None,
    max_dets: int | None = None,
) -> APReport:
    """COCO-style AP report over paired frames (detections, truths)."""
    if categories is None:
        cats: set[int] = set()
        for dets, truths in pairs:
            cats.update(o.category for o in truths)
            cats.update(d.category for d in dets)
        categories = sorted(cats)
    categories = list(categories)

    prepared = {
        c: [_prepare(dets, truths, c, max_dets) for dets, truths in pairs] for c in categories
    }

    # table[area][cat] -> list of AP per threshold (None when undefined)
    table: dict[str, dict[int, list[float | None]]] = {a: {} for a in AREA_RANGES}
    tp = fp = fn = 0
    for area_name, area_range in AREA_RANGES.items():
        for c in categories:
            row = []
            for ti, thr in enumerate(IOU_THRESHOLDS):
                pooled: list[MatchRecord] = []
                n_truths = 0
                for d, g, ious in prepared[c]:
                    recs, n = _greedy(d, g, ious, float(thr), area_range)
                    pooled.extend(recs)
                    n_truths += n
                row.append(average_precision(pooled, n_truths) if n_truths > 0 else None)
                if area_name == "all" and ti == 0:
                    n_tp = sum(r.is_true_positive for r in pooled)
                    tp += n_tp
                    fp += sum(1 for r in pooled if not r.is_true_positive and not r.ignored)
                    fn += n_truths - n_tp
            table[area_name][c] = row

    def area_mean(name: str) -> float | None:
        return _mean(v for row in table[name].values() for v in row)

    per_thr = [_mean(table["all"][c][ti] for c in categories) for ti in range(len(IOU_THRESHOLDS))]
    return APReport(
        ap=area_mean("all"),
        ap50=per_thr[0] if per_thr else None,
        ap75=per_thr[5] if per_thr else None,
        ap_small=area_mean("small"),
        ap_medium=area_mean("medium"),
        ap_large=area_mean("large"),
        per_category={c: _mean(table["all"][c]) for c in categories},
        ap_per_threshold=per_thr,
        tp=tp,
        fp=fp,
        fn=fn,
    )

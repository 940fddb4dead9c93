"""Logit decoding, SimOTA-style positive assignment and the asymmetric
distillation loss (MSE on class/objectness logits, GIoU on positive boxes).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import giou_loss, giou_loss_grad
from ..model import BoundingBox
from .conv import ShapeError, as_tensor4

LOGIT_CAP = 30.0
CENTER_RADIUS = 2.5
IOU_COST_WEIGHT = 3.0
DYNAMIC_K_CANDIDATES = 10
OUTSIDE_PRIOR_COST = 1e5
DISTILL_WEIGHTS = {"S": 0.2, "M": 0.2, "L": 0.1}


@dataclass
class LevelLogits:
    cls: np.ndarray  # (n, C, h, w)
    obj: np.ndarray  # (n, 1, h, w)
    reg: np.ndarray  # (n, 4, h, w): dx, dy, log-w, log-h
    stride: int

    def __post_init__(self) -> None:
        self.cls = as_tensor4(self.cls, "cls")
        self.obj = as_tensor4(self.obj, "obj")
        self.reg = as_tensor4(self.reg, "reg")
        n, _, h, w = self.cls.shape
        if self.obj.shape != (n, 1, h, w) or self.reg.shape != (n, 4, h, w):
            raise ShapeError(
                f"level shapes disagree: cls {self.cls.shape}, obj {self.obj.shape}, reg {self.reg.shape}"
            )

    def copy(self) -> "LevelLogits":
        return LevelLogits(self.cls.copy(), self.obj.copy(), self.reg.copy(), self.stride)


@dataclass
class LogitsBundle:
    levels: list[LevelLogits]

    def copy(self) -> "LogitsBundle":
        return LogitsBundle([lv.copy() for lv in self.levels])

    @property
    def strides(self) -> list[int]:
        return [lv.stride for lv in self.levels]

    def check_like(self, other: "LogitsBundle") -> None:
        if len(self.levels) != len(other.levels):
            raise ShapeError("bundles have different numbers of levels")
        for a, b in zip(self.levels, other.levels):
            if a.stride != b.stride or a.cls.shape != b.cls.shape:
                raise ShapeError(f"level mismatch: {a.cls.shape}@{a.stride} vs {b.cls.shape}@{b.stride}")


def random_bundle(
    rng: np.random.Generator,
    hw: tuple[int, int] = (32, 32),
    strides: Sequence[int] = (8, 16, 32),
    num_classes: int = 3,
    batch: int = 1,
    reg_scale: float = 0.5,
) -> LogitsBundle:
    levels = []
    for s in strides:
        h, w = max(hw[0] // s, 1), max(hw[1] // s, 1)
        levels.append(
            LevelLogits(
                rng.normal(size=(batch, num_classes, h, w)),
                rng.normal(size=(batch, 1, h, w)),
                rng.normal(scale=reg_scale, size=(batch, 4, h, w)),
                s,
            )
        )
    return LogitsBundle(levels)


def _check_cap(size_logits) -> None:
    if np.any(np.asarray(size_logits) > LOGIT_CAP):
        raise OverflowError(f"size logit above cap {LOGIT_CAP}")


def decode_reg(reg: Sequence[float], grid_xy: tuple[int, int], stride: float) -> BoundingBox:
    """Anchor-free grid decode of one position's regression logits."""
    dx, dy, lw, lh = (float(v) for v in reg)
    if not all(math.isfinite(v) for v in (dx, dy, lw, lh)):
        raise ValueError("regression logits must be finite")
    _check_cap((lw, lh))
    gx, gy = grid_xy
    cx, cy = (gx + dx) * stride, (gy + dy) * stride
    return BoundingBox.from_center(cx, cy, math.exp(lw) * stride, math.exp(lh) * stride)


def decode_level(reg: np.ndarray, stride: float) -> np.ndarray:
    """Decode a whole (n, 4, h, w) level into (n, h, w, 4) corner boxes."""
    _check_cap(reg[:, 2:])
    n, _, h, w = reg.shape
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cx = (gx + reg[:, 0]) * stride
    cy = (gy + reg[:, 1]) * stride
    bw = np.exp(reg[:, 2]) * stride
    bh = np.exp(reg[:, 3]) * stride
    return np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1)


def _iou_many(boxes: np.ndarray, box: BoundingBox) -> np.ndarray:
    iw = np.clip(np.minimum(boxes[:, 2], box.x_max) - np.maximum(boxes[:, 0], box.x_min), 0, None)
    ih = np.clip(np.minimum(boxes[:, 3], box.y_max) - np.maximum(boxes[:, 1], box.y_min), 0, None)
    inter = iw * ih
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area + box.area - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class Assignment:
    masks: list[np.ndarray]  # per level, (n, h, w) bool
    matched: list[np.ndarray]  # per level, (n, h, w) truth index or -1

    @property
    def num_positives(self) -> int:
        return int(sum(m.sum() for m in self.masks))


Truth = tuple[BoundingBox, int]


def _flatten(bundle: LogitsBundle, b: int):
    """Per-position arrays for image ``b``: centers, strides, boxes, class probs."""
    centers, strides, boxes, probs, index = [], [], [], [], []
    for li, lv in enumerate(bundle.levels):
        _, _, h, w = lv.cls.shape
        gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        centers.append(np.stack([(gx + 0.5) * lv.stride, (gy + 0.5) * lv.stride], -1).reshape(-1, 2))
        strides.append(np.full(h * w, float(lv.stride)))
        boxes.append(decode_level(lv.reg[b : b + 1], lv.stride)[0].reshape(-1, 4))
        p = np.sqrt(_sigmoid(lv.cls[b]) * _sigmoid(lv.obj[b]))  # (C, h, w)
        probs.append(p.reshape(p.shape[0], -1).T)
        index.extend((li, y, x) for y in range(h) for x in range(w))
    return (
        np.concatenate(centers),
        np.concatenate(strides),
        np.concatenate(boxes),
        np.concatenate(probs),
        index,
    )


def ota_assign(bundle: LogitsBundle, truths: Sequence[Truth] | Sequence[Sequence[Truth]]) -> Assignment:
    """SimOTA-lite positive selection over all pyramid positions.

    Candidates for a truth are positions whose cell center lies inside the
    box or within ``2.5 * stride`` of its center (the nearest position if
    neither). Cost is the class BCE of ``sqrt(cls * obj)`` plus
    ``3 * (1 - IoU)``, with a large penalty unless both priors hold. Each
    truth takes its ``dynamic_k`` cheapest candidates, where ``dynamic_k``
    is the rounded sum of its top-10 candidate IoUs; a position wanted by
    several truths goes to the cheapest.
    """
    n = bundle.levels[0].cls.shape[0]
    if n == 1 and (not truths or isinstance(truths[0][0], BoundingBox)):
        per_image = [list(truths)]
    else:
        per_image = [list(t) for t in truths]
    if len(per_image) != n:
        raise ShapeError(f"{len(per_image)} truth lists for batch of {n}")

    masks = [np.zeros((n,) + lv.cls.shape[2:], dtype=bool) for lv in bundle.levels]
    matched = [np.full((n,) + lv.cls.shape[2:], -1, dtype=np.int64) for lv in bundle.levels]
    for b, image_truths in enumerate(per_image):
        if not image_truths:
            continue
        centers, strides, boxes, probs, index = _flatten(bundle, b)
        num_classes = probs.shape[1]
        p = np.clip(probs, 1e-12, 1.0 - 1e-12)
        winner_cost = np.full(len(index), np.inf)
        winner = np.full(len(index), -1)
        for g, (box, cat) in enumerate(image_truths):
            gcx, gcy = box.center
            in_box = (
                (centers[:, 0] > box.x_min)
                & (centers[:, 0] < box.x_max)
                & (centers[:, 1] > box.y_min)
                & (centers[:, 1] < box.y_max)
            )
            radius = CENTER_RADIUS * strides
            in_ctr = (np.abs(centers[:, 0] - gcx) < radius) & (np.abs(centers[:, 1] - gcy) < radius)
            cand = in_box | in_ctr
            if not cand.any():
                dist = np.hypot(centers[:, 0] - gcx, centers[:, 1] - gcy)
                cand = np.zeros_like(cand)
                cand[int(np.argmin(dist))] = True
            cand_idx = np.flatnonzero(cand)
            ious = _iou_many(boxes[cand_idx], box)
            onehot = np.zeros(num_classes)
            if 0 <= cat < num_classes:
                onehot[cat] = 1.0
            pc = p[cand_idx]
            cls_cost = -(onehot * np.log(pc) + (1 - onehot) * np.log(1 - pc)).sum(axis=1)
            cost = cls_cost + IOU_COST_WEIGHT * (1.0 - ious)
            cost = cost + OUTSIDE_PRIOR_COST * ~(in_box[cand_idx] & in_ctr[cand_idx])
            top = np.sort(ious)[::-1][:DYNAMIC_K_CANDIDATES]
            k = int(min(max(math.floor(top.sum() + 0.5), 1), len(cand_idx)))
            chosen = np.argsort(cost, kind="stable")[:k]
            for c in chosen:
                pos = cand_idx[c]
                if cost[c] < winner_cost[pos]:
                    winner_cost[pos] = cost[c]
                    winner[pos] = g
        for pos in np.flatnonzero(winner >= 0):
            li, y, x = index[pos]
            masks[li][b, y, x] = True
            matched[li][b, y, x] = winner[pos]
    return Assignment(masks, matched)


@dataclass(frozen=True)
class AKDMLoss:
    total: float
    cls: float
    obj: float
    reg: float
    empty_positives: bool = False


def _positions(positives: Assignment | Sequence[np.ndarray]):
    masks = positives.masks if isinstance(positives, Assignment) else positives
    for li, m in enumerate(masks):
        for b, y, x in zip(*np.nonzero(m)):
            yield li, int(b), int(y), int(x)


def akdm_loss(
    student: LogitsBundle, teacher: LogitsBundle, positives: Assignment | Sequence[np.ndarray]
) -> AKDMLoss:
    """Distillation loss: pooled MSE over every class and objectness logit,
    plus mean GIoU loss between decoded boxes at positive positions."""
    student.check_like(teacher)
    n_cls = sum(lv.cls.size for lv in student.levels)
    n_obj = sum(lv.obj.size for lv in student.levels)
    cls = sum(float(np.sum((s.cls - t.cls) ** 2)) for s, t in zip(student.levels, teacher.levels)) / n_cls
    obj = sum(float(np.sum((s.obj - t.obj) ** 2)) for s, t in zip(student.levels, teacher.levels)) / n_obj
    losses = []
    for li, b, y, x in _positions(positives):
        s, t = student.levels[li], teacher.levels[li]
        ps = decode_reg(s.reg[b, :, y, x], (x, y), s.stride)
        pt = decode_reg(t.reg[b, :, y, x], (x, y), t.stride)
        losses.append(giou_loss(ps, pt))
    empty = not losses
    if empty:
        warnings.warn("no positive positions: regression distillation term is 0", stacklevel=2)
    reg = float(np.mean(losses)) if losses else 0.0
    return AKDMLoss(cls + obj + reg, cls, obj, reg, empty)


def akdm_grad(
    student: LogitsBundle, teacher: LogitsBundle, positives: Assignment | Sequence[np.ndarray]
) -> list[dict[str, np.ndarray]]:
    """Analytic gradient of the total loss w.r.t. every student logit.

    The assignment is treated as constant.
    """
    student.check_like(teacher)
    n_cls = sum(lv.cls.size for lv in student.levels)
    n_obj = sum(lv.obj.size for lv in student.levels)
    grads = [
        {
            "cls": 2.0 * (s.cls - t.cls) / n_cls,
            "obj": 2.0 * (s.obj - t.obj) / n_obj,
            "reg": np.zeros_like(s.reg),
        }
        for s, t in zip(student.levels, teacher.levels)
    ]
    pos = list(_positions(positives))
    for li, b, y, x in pos:
        s, t = student.levels[li], teacher.levels[li]
        ps = decode_reg(s.reg[b, :, y, x], (x, y), s.stride)
        pt = decode_reg(t.reg[b, :, y, x], (x, y), t.stride)
        g = giou_loss_grad(ps, pt)
        half_w, half_h = ps.width / 2.0, ps.height / 2.0
        stride = s.stride
        # corners: x0 = cx - w/2, x1 = cx + w/2 with cx = (gx + dx)*stride, w = exp(lw)*stride
        d = grads[li]["reg"][b, :, y, x]
        d[0] += (g.d_x_min + g.d_x_max) * stride / len(pos)
        d[1] += (g.d_y_min + g.d_y_max) * stride / len(pos)
        d[2] += (g.d_x_max - g.d_x_min) * half_w / len(pos)
        d[3] += (g.d_y_max - g.d_y_min) * half_h / len(pos)
    return grads


@dataclass(frozen=True)
class GradCheck:
    cls: float
    obj: float
    reg: float

    @property
    def max_error(self) -> float:
        return max(self.cls, self.obj, self.reg)


def _rel(a: float, f: float, floor: float = 1e-8) -> float:
    return abs(a - f) / max(abs(a), abs(f), floor)


# central differences are exact on the quadratic terms, so a wide step only
# suppresses rounding; the GIoU term needs a small step
MSE_STEP = 0.5
REG_STEP = 1e-6


def akdm_grad_check(
    student: LogitsBundle,
    teacher: LogitsBundle,
    positives: Assignment | Sequence[np.ndarray],
) -> GradCheck:
    """Max relative error of ``akdm_grad`` against central finite differences,
    reported per term."""
    grads = akdm_grad(student, teacher, positives)
    worst = {"cls": 0.0, "obj": 0.0, "reg": 0.0}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for li, lv in enumerate(student.levels):
            for field_name in worst:
                arr = getattr(lv, field_name)
                h = REG_STEP if field_name == "reg" else MSE_STEP
                for idx in np.ndindex(arr.shape):
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = getattr(akdm_loss(student, teacher, positives), field_name)
                    arr[idx] = orig - h
                    down = getattr(akdm_loss(student, teacher, positives), field_name)
                    arr[idx] = orig
                    fd = (up - down) / (2.0 * h)
                    worst[field_name] = max(worst[field_name], _rel(grads[li][field_name][idx], fd))
    return GradCheck(**worst)


def weighted_total(task_loss: float, akdm: float, scale: str) -> float:
    """Task loss plus the scale-dependent distillation weight (S/M/L)."""
    try:
        w = DISTILL_WEIGHTS[scale.upper()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown model scale {scale!r}; expected one of S, M, L") from None
    if not (math.isfinite(task_loss) and math.isfinite(akdm)):
        raise ValueError("losses must be finite")
    return task_loss + w * akdm

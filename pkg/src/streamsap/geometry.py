"""IoU, GIoU and the GIoU loss with its analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass

from .model import BoundingBox, DegenerateGeometryError


@dataclass(frozen=True)
class GradGIoU:
    """Partial derivatives of the GIoU loss w.r.t. the predicted corners."""

    d_x_min: float
    d_y_min: float
    d_x_max: float
    d_y_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_x_min, self.d_y_min, self.d_x_max, self.d_y_max)


def _overlap(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    iw = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    ih = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    return iw, ih


def _areas(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    iw, ih = _overlap(a, b)
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        raise DegenerateGeometryError(f"both boxes have zero area: {a}, {b}")
    return inter, union


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter, union = _areas(a, b)
    return inter / union


def giou(a: BoundingBox, b: BoundingBox) -> float:
    inter, union = _areas(a, b)
    cw = max(a.x_max, b.x_max) - min(a.x_min, b.x_min)
    ch = max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    enclosing = cw * ch
    return inter / union - (enclosing - union) / enclosing


def giou_loss(pred: BoundingBox, target: BoundingBox) -> float:
    return 1.0 - giou(pred, target)


def giou_loss_grad(pred: BoundingBox, target: BoundingBox) -> GradGIoU:
    """Analytic gradient of ``giou_loss`` w.r.t. ``pred``'s corners.

    The loss is ``2 - I/U - U/C`` (intersection, union, enclosing area).
    Where a predicted edge coincides with the target edge, the predicted
    edge is taken as the active one for both the intersection and the
    enclosing box; at ``pred == target`` this yields the zero subgradient.
    """
    if pred.area <= 0.0:
        raise DegenerateGeometryError(f"predicted box has zero area: {pred}")
    p, t = pred, target
    pw, ph = p.width, p.height

    ix0, ix1 = max(p.x_min, t.x_min), min(p.x_max, t.x_max)
    iy0, iy1 = max(p.y_min, t.y_min), min(p.y_max, t.y_max)
    iw, ih = ix1 - ix0, iy1 - iy0
    overlapping = iw > 0.0 and ih > 0.0
    inter = iw * ih if overlapping else 0.0
    union = p.area + t.area - inter

    cw = max(p.x_max, t.x_max) - min(p.x_min, t.x_min)
    ch = max(p.y_max, t.y_max) - min(p.y_min, t.y_min)
    enclosing = cw * ch

    # pred-area derivatives
    d_area = (-ph, -pw, ph, pw)

    if overlapping:
        d_inter = (
            -ih if p.x_min >= t.x_min else 0.0,
            -iw if p.y_min >= t.y_min else 0.0,
            ih if p.x_max <= t.x_max else 0.0,
            iw if p.y_max <= t.y_max else 0.0,
        )
    else:
        d_inter = (0.0, 0.0, 0.0, 0.0)

    d_enc = (
        -ch if p.x_min <= t.x_min else 0.0,
        -cw if p.y_min <= t.y_min else 0.0,
        ch if p.x_max >= t.x_max else 0.0,
        cw if p.y_max >= t.y_max else 0.0,
    )

    grads = []
    for da, di, dc in zip(d_area, d_inter, d_enc):
        du = da - di
        g = -(di * union - inter * du) / union**2 - (du * enclosing - union * dc) / enclosing**2
        grads.append(g)
    return GradGIoU(*grads)

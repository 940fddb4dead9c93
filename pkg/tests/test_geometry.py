from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from streamsap.geometry import giou, giou_loss, giou_loss_grad, iou
from streamsap.model import BoundingBox, DegenerateGeometryError

A = BoundingBox(0, 0, 10, 10)
B = BoundingBox(5, 5, 15, 15)


def raster_oracle(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    """IoU and GIoU by counting unit cells on an integer lattice."""
    lo = int(min(a.x_min, b.x_min, a.y_min, b.y_min))
    hi = int(max(a.x_max, b.x_max, a.y_max, b.y_max))
    xs = np.arange(lo, hi) + 0.5
    gx, gy = np.meshgrid(xs, xs)

    def inside(r):
        return (gx > r.x_min) & (gx < r.x_max) & (gy > r.y_min) & (gy < r.y_max)

    ma, mb = inside(a), inside(b)
    inter = np.sum(ma & mb)
    union = np.sum(ma | mb)
    hull = BoundingBox(
        min(a.x_min, b.x_min), min(a.y_min, b.y_min), max(a.x_max, b.x_max), max(a.y_max, b.y_max)
    )
    c = np.sum(inside(hull))
    return inter / union, inter / union - (c - union) / c


def test_hand_values():
    assert iou(A, A) == 1.0
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0
    assert iou(A, B) == pytest.approx(25 / 175, abs=1e-12)
    assert giou(A, A) == 1.0
    assert giou(A, B) == pytest.approx(25 / 175 - 50 / 225, abs=1e-12)
    assert giou(A, B) == pytest.approx(-0.079365, abs=1e-6)
    assert giou_loss(A, A) == 0.0
    assert giou_loss(A, B) == pytest.approx(1.079365, abs=1e-6)


def test_far_separation_limits():
    far = BoundingBox(1e6, 1e6, 1e6 + 10, 1e6 + 10)
    assert giou(A, far) <= -0.99
    assert giou_loss(A, far) == pytest.approx(2.0, abs=1e-3)


def test_degenerate_union_raises():
    pt = BoundingBox(3, 3, 3, 3)
    with pytest.raises(DegenerateGeometryError):
        iou(pt, pt)
    with pytest.raises(DegenerateGeometryError):
        giou_loss_grad(pt, A)


int_box = st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 15), st.integers(1, 15)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3])
)
real_box = st.tuples(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 80), st.floats(0.5, 80)
).map(lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(int_box, int_box)
def test_matches_raster_oracle(a, b):
    ref_iou, ref_giou = raster_oracle(a, b)
    assert iou(a, b) == pytest.approx(ref_iou, abs=1e-9)
    assert giou(a, b) == pytest.approx(ref_giou, abs=1e-9)


@given(real_box, real_box)
def test_bounds_and_symmetry(a, b):
    v, g = iou(a, b), giou(a, b)
    assert 0.0 <= v <= 1.0
    assert -1.0 <= g <= v + 1e-12
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert g == pytest.approx(giou(b, a), abs=1e-12)
    assert giou_loss(a, b) == pytest.approx(1.0 - g, abs=1e-12)


@given(real_box, st.floats(-50, 50), st.floats(-50, 50))
def test_translation_invariance(a, dx, dy):
    b = a.translate(7.0, -3.0)
    assert iou(a.translate(dx, dy), b.translate(dx, dy)) == pytest.approx(iou(a, b), abs=1e-9)


def central_diff(p: BoundingBox, t: BoundingBox, h: float = 1e-5) -> np.ndarray:
    c = list(p.as_tuple())
    out = []
    for i in range(4):
        up, down = list(c), list(c)
        up[i] += h
        down[i] -= h
        out.append((giou_loss(BoundingBox(*up), t) - giou_loss(BoundingBox(*down), t)) / (2 * h))
    return np.array(out)


def test_grad_vs_finite_differences_seed7():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x, y = rng.uniform(0, 50, 2)
        w, h = rng.uniform(1, 50, 2)
        p = BoundingBox(x, y, x + w, y + h)
        x, y = rng.uniform(0, 50, 2)
        w, h = rng.uniform(1, 50, 2)
        t = BoundingBox(x, y, x + w, y + h)
        g = np.array(giou_loss_grad(p, t).as_tuple())
        fd = central_diff(p, t)
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        assert rel.max() <= 1e-4


def test_grad_symmetric_square():
    p = BoundingBox(0, 0, 10, 10)
    t = BoundingBox(-2, -2, 12, 12)
    g = giou_loss_grad(p, t).as_tuple()
    assert len({round(abs(v), 12) for v in g}) == 1
    assert g[0] == pytest.approx(-g[2])


def test_grad_disjoint_points_toward_target():
    p = BoundingBox(0, 0, 10, 10)
    t = BoundingBox(30, 0, 40, 10)
    g = np.array(giou_loss_grad(p, t).as_tuple())
    direction = np.array([1.0, 0.0, 1.0, 0.0])  # translate right
    assert g @ direction < 0
    moved = p.translate(1.0, 0.0)
    assert giou_loss(moved, t) < giou_loss(p, t)


@given(real_box, real_box)
def test_grad_matches_finite_differences_property(p, t):
    # away from kinks (coincident edges) the loss is smooth
    edges = np.array(p.as_tuple())[:, None] - np.array(t.as_tuple())[None, :]
    assume(np.min(np.abs(edges)) > 1e-3)
    g = np.array(giou_loss_grad(p, t).as_tuple())
    fd = central_diff(p, t, h=1e-6)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-6)

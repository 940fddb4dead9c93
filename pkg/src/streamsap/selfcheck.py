"""Numeric self-checks for the kernel suite, run by ``streamsap selfcheck``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import giou_loss, giou_loss_grad
from .model import BoundingBox
from .kernels.conv import (
    BatchNorm,
    ConvParams,
    RepBranches,
    bilinear_sample,
    conv2d,
    deform_conv2d,
    rep_fuse,
)
from .kernels.distill import akdm_grad_check, akdm_loss, ota_assign, random_bundle


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)


def random_bn(rng: np.random.Generator, c: int) -> BatchNorm:
    return BatchNorm(
        rng.normal(size=c), rng.uniform(0.5, 2.0, c), rng.normal(size=c), rng.normal(size=c), 1e-5
    )


def random_branches(rng: np.random.Generator) -> RepBranches:
    c_in = int(rng.integers(1, 5))
    identity = bool(rng.integers(0, 2))
    c_out = c_in if identity else int(rng.integers(1, 5))
    return RepBranches(
        main=ConvParams(rng.normal(size=(c_out, c_in, 3, 3)), rng.normal(size=c_out), 1, 1),
        side=ConvParams(rng.normal(size=(c_out, c_in, 1, 1)), rng.normal(size=c_out), 1, 0),
        bn_main=random_bn(rng, c_out),
        bn_side=random_bn(rng, c_out),
        identity_enabled=identity,
        bn_identity=random_bn(rng, c_in) if identity else None,
    )


def random_box(rng: np.random.Generator, scale: float = 50.0) -> BoundingBox:
    x, y = rng.uniform(0, scale, 2)
    w, h = rng.uniform(1.0, scale, 2)
    return BoundingBox(x, y, x + w, y + h)


def check_deform_zero_offsets(seed: int = 0, trials: int = 10) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(2, 3, 9, 11))
        p = ConvParams(rng.normal(size=(4, 3, k, k)), rng.normal(size=4), stride, (k - 1) // 2)
        ref = conv2d(x, p)
        off = np.zeros((2, 2 * k * k) + ref.shape[2:])
        worst = max(worst, float(np.max(np.abs(deform_conv2d(x, p, off) - ref))))
    return worst


def check_deform_vs_scalar(seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    k, pad = 3, 1
    x = rng.normal(size=(1, 2, 6, 7))
    p = ConvParams(rng.normal(size=(2, 2, k, k)), rng.normal(size=2), 1, pad)
    off = rng.normal(scale=1.5, size=(1, 2 * k * k, 6, 7))
    fast = deform_conv2d(x, p, off)
    worst = 0.0
    for co in range(2):
        for oy in range(6):
            for ox in range(7):
                acc = p.bias[co]
                for ci in range(2):
                    for ky in range(k):
                        for kx in range(k):
                            i = ky * k + kx
                            sy = oy - pad + ky + off[0, 2 * i + 1, oy, ox]
                            sx = ox - pad + kx + off[0, 2 * i, oy, ox]
                            acc += p.weight[co, ci, ky, kx] * bilinear_sample(x, 0, ci, sy, sx)
                worst = max(worst, abs(acc - fast[0, co, oy, ox]))
    return worst


def check_rep_fuse(seed: int = 2, trials: int = 100) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        b = random_branches(rng)
        x = rng.normal(size=(1, b.main.c_in, 6, 5))
        ref = b.forward(x)
        fused = conv2d(x, rep_fuse(b))
        worst = max(worst, float(np.max(np.abs(fused - ref)) / max(np.max(np.abs(ref)), 1e-12)))
    return worst


def check_giou_grad(seed: int = 7, trials: int = 100, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p, t = random_box(rng), random_box(rng)
        g = giou_loss_grad(p, t).as_tuple()
        coords = list(p.as_tuple())
        for i in range(4):
            up, down = list(coords), list(coords)
            up[i] += h
            down[i] -= h
            fd = (giou_loss(BoundingBox(*up), t) - giou_loss(BoundingBox(*down), t)) / (2 * h)
            worst = max(worst, abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-8))
    return worst


def _distill_case(seed: int):
    rng = np.random.default_rng(seed)
    teacher = random_bundle(rng, hw=(32, 32), strides=(8, 16))
    student = teacher.copy()
    for s in student.levels:
        s.cls += rng.normal(scale=0.3, size=s.cls.shape)
        s.obj += rng.normal(scale=0.3, size=s.obj.shape)
        s.reg += rng.normal(scale=0.2, size=s.reg.shape)
    truths = [(BoundingBox(4.0, 6.0, 20.0, 26.0), 1), (BoundingBox(18.0, 2.0, 30.0, 12.0), 0)]
    return student, teacher, ota_assign(teacher, truths)


def check_akdm_identity(seed: int = 11) -> float:
    student, teacher, pos = _distill_case(seed)
    return abs(akdm_loss(teacher, teacher.copy(), pos).total)


def check_akdm_grad(seed: int = 11) -> tuple[float, float]:
    student, teacher, pos = _distill_case(seed)
    gc = akdm_grad_check(student, teacher, pos)
    return max(gc.cls, gc.obj), gc.reg


def run_checks(tolerance: float | None = None) -> list[CheckResult]:
    """Run every kernel property; ``tolerance`` overrides all default bounds."""

    def tol(default: float) -> float:
        return default if tolerance is None else tolerance

    mse_err, reg_err = check_akdm_grad()
    checks: list[tuple[str, Callable[[], float] | float, float]] = [
        ("deform_conv2d(offsets=0) == conv2d", check_deform_zero_offsets, 0.0),
        ("deform_conv2d vs scalar bilinear loop", check_deform_vs_scalar, 1e-12),
        ("rep_fuse forward equivalence (100 configs, rel)", check_rep_fuse, 1e-6),
        ("giou_loss_grad vs central differences (rel)", check_giou_grad, 1e-4),
        ("akdm_loss(x, x) == 0", check_akdm_identity, 0.0),
        ("akdm MSE-term gradient (rel)", mse_err, 1e-10),
        ("akdm GIoU-term gradient (rel)", reg_err, 1e-4),
    ]
    results = []
    for name, fn, default in checks:
        err = fn() if callable(fn) else fn
        results.append(CheckResult(name, float(err), tol(default)))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'property'.ljust(width)}  {'max error':>12}  {'tolerance':>10}  result"]
    for r in results:
        lines.append(
            f"{r.name.ljust(width)}  {r.max_error:12.3e}  {r.tolerance:10.1e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)

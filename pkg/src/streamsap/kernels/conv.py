"""Direct convolution, deformable convolution and branch re-parameterization.

Tensors are float64 numpy arrays in NCHW layout. Convolutions loop over
kernel taps and contract channels with ``tensordot``; cost is
O(n * c_out * c_in * h * w * k^2) with no FFT or im2col buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass
class ConvParams:
    weight: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray  # (c_out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"weight must be (c_out, c_in, k, k), got {self.weight.shape}")
        if self.bias is None:
            self.bias = np.zeros(self.weight.shape[0])
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weight.shape[0]},)")
        if self.kernel_size % 2 == 0:
            raise ShapeError("kernel size must be odd")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def same(cls, weight, bias=None, stride: int = 1) -> "ConvParams":
        w = np.asarray(weight, dtype=np.float64)
        return cls(w, bias, stride, (w.shape[2] - 1) // 2)


def output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check(x: np.ndarray, p: ConvParams) -> tuple[int, int]:
    if x.shape[1] != p.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {p.c_in}")
    ho = output_size(x.shape[2], p.kernel_size, p.stride, p.padding)
    wo = output_size(x.shape[3], p.kernel_size, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape} too small for kernel {p.kernel_size}")
    return ho, wo


def conv2d(x, p: ConvParams) -> np.ndarray:
    x = as_tensor4(x, "x")
    ho, wo = _check(x, p)
    k, s = p.kernel_size, p.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p.padding, p.padding), (p.padding, p.padding)))
    out = np.zeros((x.shape[0], p.c_out, ho, wo))
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, :, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
            # (n, c_in, ho, wo) x (c_out, c_in) -> (n, ho, wo, c_out)
            out += np.moveaxis(np.tensordot(patch, p.weight[:, :, ky, kx], axes=([1], [1])), -1, 1)
    return out + p.bias[None, :, None, None]


def bilinear_sample(x, n: int, c: int, y: float, x_pos: float) -> float:
    """Bilinear read of ``x[n, c]`` at a real position; outside reads as 0."""
    plane = np.asarray(x)[n, c]
    h, w = plane.shape
    y0, x0 = math.floor(y), math.floor(x_pos)
    ly, lx = y - y0, x_pos - x0
    total = 0.0
    for yy, wy in ((y0, 1.0 - ly), (y0 + 1, ly)):
        for xx, wx in ((x0, 1.0 - lx), (x0 + 1, lx)):
            if 0 <= yy < h and 0 <= xx < w and wy * wx != 0.0:
                total += wy * wx * plane[yy, xx]
    return float(total)


def _bilinear_gather(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Vectorized bilinear reads: ys, xs are (n, ho, wo); returns (n, c, ho, wo)."""
    n, c, h, w = x.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ly, lx = ys - y0, xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    out = np.zeros((n, c) + ys.shape[1:])
    batch = np.arange(n)[:, None, None]
    for dy, wy in ((0, 1.0 - ly), (1, ly)):
        for dx, wx in ((0, 1.0 - lx), (1, lx)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = x[batch, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]  # (n, ho, wo, c)
            wgt = np.where(valid, wy * wx, 0.0)
            out += np.moveaxis(vals * wgt[..., None], -1, 1)
    return out


def deform_conv2d(x, p: ConvParams, offsets) -> np.ndarray:
    """Deformable convolution with per-position, per-tap learned offsets.

    ``offsets`` has shape (n, 2*k*k, ho, wo); for tap ``i = ky*k + kx``,
    channel ``2i`` holds the x offset and ``2i+1`` the y offset.
    """
    x = as_tensor4(x, "x")
    off = as_tensor4(offsets, "offsets")
    ho, wo = _check(x, p)
    k, s, pad = p.kernel_size, p.stride, p.padding
    if off.shape != (x.shape[0], 2 * k * k, ho, wo):
        raise ShapeError(f"offsets shape {off.shape} != {(x.shape[0], 2 * k * k, ho, wo)}")
    base_y = (np.arange(ho) * s - pad)[:, None].astype(np.float64)
    base_x = (np.arange(wo) * s - pad)[None, :].astype(np.float64)
    out = np.zeros((x.shape[0], p.c_out, ho, wo))
    for ky in range(k):
        for kx in range(k):
            i = ky * k + kx
            ys = base_y + ky + off[:, 2 * i + 1]
            xs = base_x + kx + off[:, 2 * i]
            sampled = _bilinear_gather(x, ys, xs)
            out += np.moveaxis(np.tensordot(sampled, p.weight[:, :, ky, kx], axes=([1], [1])), -1, 1)
    return out + p.bias[None, :, None, None]


@dataclass
class BatchNorm:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int) -> "BatchNorm":
        # eps=0 so the normalization is exactly the identity map
        return cls(np.zeros(channels), np.ones(channels), np.ones(channels), np.zeros(channels), 0.0)

    def scale(self) -> np.ndarray:
        return np.asarray(self.gamma) / np.sqrt(np.asarray(self.var) + self.eps)

    def apply(self, y: np.ndarray) -> np.ndarray:
        sc = self.scale()[None, :, None, None]
        return (y - np.asarray(self.mean)[None, :, None, None]) * sc + np.asarray(self.beta)[None, :, None, None]


@dataclass
class RepBranches:
    main: ConvParams  # 3x3, padding 1
    side: ConvParams  # 1x1, padding 0
    bn_main: BatchNorm
    bn_side: BatchNorm
    identity_enabled: bool = False
    bn_identity: BatchNorm | None = None

    def __post_init__(self) -> None:
        if self.main.kernel_size != 3 or self.side.kernel_size != 1:
            raise ShapeError("RepBranches expects a 3x3 main and a 1x1 side branch")
        if self.main.weight.shape[:2] != self.side.weight.shape[:2]:
            raise ShapeError("main and side branches must agree on channels")
        if self.main.stride != self.side.stride:
            raise ShapeError("branch strides differ")
        if self.identity_enabled:
            if self.main.c_in != self.main.c_out:
                raise ShapeError("identity branch needs c_in == c_out")
            if self.main.stride != 1:
                raise ShapeError("identity branch needs stride 1")
            if self.bn_identity is None:
                raise ShapeError("identity branch needs batch-norm statistics")

    def forward(self, x) -> np.ndarray:
        """Multi-branch (training-time) forward."""
        main = ConvParams(self.main.weight, self.main.bias, self.main.stride, 1)
        side = ConvParams(self.side.weight, self.side.bias, self.side.stride, 0)
        y = self.bn_main.apply(conv2d(x, main)) + self.bn_side.apply(conv2d(x, side))
        if self.identity_enabled:
            y = y + self.bn_identity.apply(as_tensor4(x))
        return y


def _fold(weight: np.ndarray, bias: np.ndarray, bn: BatchNorm) -> tuple[np.ndarray, np.ndarray]:
    sc = bn.scale()
    return weight * sc[:, None, None, None], np.asarray(bn.beta) + (bias - np.asarray(bn.mean)) * sc


def rep_fuse(b: RepBranches) -> ConvParams:
    """Fold every branch's batch norm and sum them into one 3x3 convolution."""
    w3, b3 = _fold(b.main.weight, b.main.bias, b.bn_main)
    side_w = np.zeros_like(b.main.weight)
    side_w[:, :, 1, 1] = b.side.weight[:, :, 0, 0]
    w1, b1 = _fold(side_w, b.side.bias, b.bn_side)
    weight, bias = w3 + w1, b3 + b1
    if b.identity_enabled:
        eye = np.zeros_like(b.main.weight)
        for ch in range(b.main.c_out):
            eye[ch, ch, 1, 1] = 1.0
        wi, bi = _fold(eye, np.zeros(b.main.c_out), b.bn_identity)
        weight, bias = weight + wi, bias + bi
    return ConvParams(weight, bias, b.main.stride, 1)


def long_short_fuse(short, longs: Sequence, reduce: ConvParams) -> np.ndarray:
    """Concatenate current and historical features on channels, then 1x1-reduce."""
    short = as_tensor4(short, "short")
    parts = [short] + [as_tensor4(t, f"long[{i}]") for i, t in enumerate(longs)]
    for i, t in enumerate(parts[1:]):
        if (t.shape[0], t.shape[2], t.shape[3]) != (short.shape[0], short.shape[2], short.shape[3]):
            raise ShapeError(f"long[{i}] shape {t.shape} does not match short {short.shape}")
    if reduce.kernel_size != 1 or reduce.stride != 1:
        raise ShapeError("reduce must be a stride-1 1x1 convolution")
    if reduce.c_out != short.shape[1]:
        raise ShapeError(f"reduce outputs {reduce.c_out} channels, short has {short.shape[1]}")
    return conv2d(np.concatenate(parts, axis=1), reduce)

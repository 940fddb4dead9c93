"""Symbolic shape propagation through PAFPN / DRFPN neck wirings."""

from __future__ import annotations

from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter

from .conv import ShapeError


@dataclass(frozen=True)
class Node:
    name: str
    stride: int
    channels: int
    block: str = "csp"  # input | conv | csp | dr


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: str  # lateral | top_down | bottom_up | buac


@dataclass
class PyramidSpec:
    input_hw: tuple[int, int]
    nodes: list[Node]
    edges: list[Edge]
    batch: int = 1
    in_channels: int = 3

    def without(self, kind: str) -> "PyramidSpec":
        return PyramidSpec(
            self.input_hw,
            list(self.nodes),
            [e for e in self.edges if e.kind != kind],
            self.batch,
            self.in_channels,
        )


def level_size(size: int, stride: int) -> int:
    """Spatial size after ``log2(stride)`` stride-2, pad-1, 3x3 convolutions."""
    if stride < 1 or stride & (stride - 1):
        raise ShapeError(f"stride {stride} is not a power of two")
    while stride > 1:
        size = (size - 1) // 2 + 1
        stride //= 2
    return size


def _resample(hw: tuple[int, int], src_stride: int, dst_stride: int) -> tuple[int, int]:
    if src_stride == dst_stride:
        return hw
    if src_stride > dst_stride:  # nearest upsample
        f = src_stride // dst_stride
        return hw[0] * f, hw[1] * f
    out = hw
    s = src_stride
    while s < dst_stride:  # stride-2 conv per octave
        out = ((out[0] - 1) // 2 + 1, (out[1] - 1) // 2 + 1)
        s *= 2
    return out


def drfpn_shapes(spec: PyramidSpec) -> dict[str, tuple[int, int, int, int]]:
    """Propagate (n, c, h, w) through the wiring and check every fusion.

    Input nodes take their size from the backbone arithmetic; every other
    node concatenates its resampled inputs, which must agree spatially.
    """
    nodes = {n.name: n for n in spec.nodes}
    preds: dict[str, list[Edge]] = {name: [] for name in nodes}
    for e in spec.edges:
        if e.src not in nodes or e.dst not in nodes:
            raise ShapeError(f"edge {e.src}->{e.dst} references an unknown node")
        preds[e.dst].append(e)
    try:
        order = list(TopologicalSorter({n: [e.src for e in preds[n]] for n in nodes}).static_order())
    except CycleError as exc:
        raise ShapeError(f"wiring has a cycle: {exc.args[1]}") from None

    h, w = spec.input_hw
    shapes: dict[str, tuple[int, int, int, int]] = {}
    for name in order:
        node = nodes[name]
        if node.block == "input":
            if preds[name]:
                raise ShapeError(f"input node {name} must not have predecessors")
            shapes[name] = (spec.batch, node.channels, level_size(h, node.stride), level_size(w, node.stride))
            continue
        if not preds[name]:
            raise ShapeError(f"node {name} has no inputs")
        sizes = {}
        for e in preds[name]:
            src = nodes[e.src]
            sizes[e.src] = _resample(shapes[e.src][2:], src.stride, node.stride)
        distinct = set(sizes.values())
        if len(distinct) != 1:
            raise ShapeError(f"inconsistent shapes at fusion node {name}: {sizes}")
        hw = distinct.pop()
        shapes[name] = (spec.batch, node.channels, hw[0], hw[1])
    return shapes


def pafpn_spec(input_hw: tuple[int, int], channels: tuple[int, int, int] = (256, 512, 1024)) -> PyramidSpec:
    """YOLOX-style PAFPN: top-down then bottom-up over strides 8/16/32."""
    c3, c4, c5 = channels
    nodes = [
        Node("C3", 8, c3, "input"),
        Node("C4", 16, c4, "input"),
        Node("C5", 32, c5, "input"),
        Node("P5_lat", 32, c4, "conv"),
        Node("P4_td", 16, c4, "csp"),
        Node("P4_lat", 16, c3, "conv"),
        Node("P3_out", 8, c3, "csp"),
        Node("N4_out", 16, c4, "csp"),
        Node("N5_out", 32, c5, "csp"),
    ]
    edges = [
        Edge("C5", "P5_lat", "lateral"),
        Edge("P5_lat", "P4_td", "top_down"),
        Edge("C4", "P4_td", "lateral"),
        Edge("P4_td", "P4_lat", "lateral"),
        Edge("P4_lat", "P3_out", "top_down"),
        Edge("C3", "P3_out", "lateral"),
        Edge("P3_out", "N4_out", "bottom_up"),
        Edge("P4_lat", "N4_out", "lateral"),
        Edge("N4_out", "N5_out", "bottom_up"),
        Edge("P5_lat", "N5_out", "lateral"),
    ]
    return PyramidSpec(input_hw, nodes, edges)


def drfpn_spec(input_hw: tuple[int, int], channels: tuple[int, int, int] = (256, 512, 1024)) -> PyramidSpec:
    """PAFPN wiring with DR blocks and bottom-up auxiliary connections.

    The auxiliary edges carry backbone features one level up into the
    bottom-up fusions, bridging low- and high-level semantics.
    """
    base = pafpn_spec(input_hw, channels)
    nodes = [Node(n.name, n.stride, n.channels, "dr" if n.block == "csp" else n.block) for n in base.nodes]
    edges = list(base.edges) + [
        Edge("C3", "N4_out", "buac"),
        Edge("C4", "N5_out", "buac"),
    ]
    return PyramidSpec(input_hw, nodes, edges)


OUTPUT_NODES = ("P3_out", "N4_out", "N5_out")

"""Detector contract and mock forecasters that read ground-truth geometry.

A detector is stepped once per processed frame. It sees a :class:`Window`
(the current frame plus support frames) and its own opaque state, and
returns forecasts for horizons ``1..K`` together with the new state.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Protocol

import numpy as np

from .geometry import iou
from .model import BoundingBox, Detection, FrameTruth

Forecasts = dict[int, list[Detection]]


@dataclass(frozen=True)
class DetectorState:
    payload: Any = None
    last_updated: int = -1


@dataclass(frozen=True)
class Window:
    frames: tuple[FrameTruth, ...]  # frames[0] is the current frame
    horizon: int
    step: int = 1
    image_size: tuple[int, int] | None = None
    oracle: Callable[[int], FrameTruth | None] | None = field(default=None, compare=False)

    @property
    def current(self) -> FrameTruth:
        return self.frames[0]

    @property
    def indices(self) -> list[int]:
        return [f.frame_index for f in self.frames]


class DetectorModel(Protocol):
    name: str

    def init(self, categories: Mapping[int, str], cfg: Mapping[str, Any] | None = None) -> DetectorState: ...

    def step(self, window: Window, state: DetectorState) -> tuple[Forecasts, DetectorState]: ...


def substream(seed: int, *names: object) -> np.random.Generator:
    """Independent RNG stream keyed by ``seed`` and a name path."""
    key = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(key)


def _as_detections(objects, score: float = 1.0) -> list[Detection]:
    # fresh boxes: forecasts never alias scenario objects
    return [Detection(BoundingBox(*o.bbox.as_tuple()), o.category, score) for o in objects if not o.ignore]


class PerfectForecaster:
    """Emits the exact future truth; needs oracle access to the stream."""

    name = "perfect"

    def init(self, categories, cfg=None) -> DetectorState:
        return DetectorState()

    def step(self, window: Window, state: DetectorState) -> tuple[Forecasts, DetectorState]:
        if window.oracle is None:
            raise RuntimeError("PerfectForecaster needs oracle access to future frames")
        t = window.current.frame_index
        out: Forecasts = {}
        for k in range(1, window.horizon + 1):
            future = window.oracle(t + k)
            out[k] = [] if future is None else _as_detections(future.objects)
        return out, DetectorState(None, t)


class DelayedOracle:
    """Zero-motion forecaster: repeats the current frame's truth."""

    name = "delayed"

    def init(self, categories, cfg=None) -> DetectorState:
        return DetectorState()

    def step(self, window: Window, state: DetectorState) -> tuple[Forecasts, DetectorState]:
        dets = _as_detections(window.current.objects)
        return {k: list(dets) for k in range(1, window.horizon + 1)}, DetectorState(
            None, window.current.frame_index
        )


@dataclass(frozen=True)
class _Track:
    track_id: int
    category: int
    history: tuple[tuple[int, BoundingBox], ...]  # (frame_index, box), oldest first
    misses: int = 0

    @property
    def last_box(self) -> BoundingBox:
        return self.history[-1][1]


def _velocity(times: list[float], values: list[float]) -> float:
    """Slope at ``times[0]`` of the interpolating polynomial through the samples."""
    if len(times) < 2:
        return 0.0
    t0 = times[0]
    dt = np.array([t - t0 for t in times], dtype=float)
    vander = np.vander(dt, len(dt), increasing=True)
    coeffs = np.linalg.solve(vander, np.asarray(values, dtype=float))
    return float(coeffs[1])


class ConstantVelocityForecaster:
    """Greedy-IoU tracker with linear extrapolation of center and log-size.

    Track histories are kept in the detector state (the support-frame
    buffer). Per-frame velocity is estimated at the current frame from the
    track's boxes at the window indices; with ``m`` samples this is the
    slope of their degree ``m-1`` interpolant, so longer windows stay exact
    under constant acceleration at the estimation point.
    """

    name = "cv"

    def __init__(self, iou_threshold: float = 0.3, miss_budget: int = 3):
        self.iou_threshold = iou_threshold
        self.miss_budget = miss_budget

    def init(self, categories, cfg=None) -> DetectorState:
        return DetectorState({"tracks": (), "next_id": 0})

    def _associate(self, tracks, objects):
        pairs = []
        for ti, tr in enumerate(tracks):
            for oi, obj in enumerate(objects):
                if obj.category != tr.category:
                    continue
                v = iou(tr.last_box, obj.bbox)
                if v >= self.iou_threshold:
                    pairs.append((v, ti, oi))
        # greedy by IoU; ties resolved by track then object order
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        used_t, used_o, matches = set(), set(), {}
        for _, ti, oi in pairs:
            if ti in used_t or oi in used_o:
                continue
            used_t.add(ti)
            used_o.add(oi)
            matches[oi] = ti
        return matches

    def step(self, window: Window, state: DetectorState) -> tuple[Forecasts, DetectorState]:
        t = window.current.frame_index
        payload = state.payload or {"tracks": (), "next_id": 0}
        tracks: tuple[_Track, ...] = payload["tracks"]
        next_id = payload["next_id"]
        objects = [o for o in window.current.objects if not o.ignore]
        window_idx = sorted(set(window.indices), reverse=True)
        keep_from = window_idx[-1]

        matches = self._associate(tracks, objects)
        matched_tracks = set(matches.values())
        new_tracks: list[_Track] = []
        current: list[_Track] = []
        for oi, obj in enumerate(objects):
            if oi in matches:
                tr = tracks[matches[oi]]
                hist = tuple(h for h in tr.history if keep_from <= h[0] < t) + ((t, obj.bbox),)
                tr = _Track(tr.track_id, tr.category, hist, 0)
            else:
                tr = _Track(next_id, obj.category, ((t, obj.bbox),), 0)
                next_id += 1
            new_tracks.append(tr)
            current.append(tr)
        for ti, tr in enumerate(tracks):
            if ti not in matched_tracks and tr.misses + 1 <= self.miss_budget:
                new_tracks.append(replace(tr, misses=tr.misses + 1))

        out: Forecasts = {k: [] for k in range(1, window.horizon + 1)}
        for tr in current:
            by_frame = dict(tr.history)
            samples = [(f, by_frame[f]) for f in window_idx if f in by_frame]
            if len(samples) < 2 or any(b.area <= 0 for _, b in samples):
                for k in out:
                    out[k].append(Detection(tr.last_box, tr.category, 1.0))
                continue
            times = [float(f) for f, _ in samples]
            cx = [b.center[0] for _, b in samples]
            cy = [b.center[1] for _, b in samples]
            lw = [math.log(b.width) for _, b in samples]
            lh = [math.log(b.height) for _, b in samples]
            vel = [_velocity(times, s) for s in (cx, cy, lw, lh)]
            for k in out:
                box = BoundingBox.from_center(
                    cx[0] + vel[0] * k,
                    cy[0] + vel[1] * k,
                    math.exp(lw[0] + vel[2] * k),
                    math.exp(lh[0] + vel[3] * k),
                )
                out[k].append(Detection(box, tr.category, 1.0))
        new_state = DetectorState({"tracks": tuple(new_tracks), "next_id": next_id}, t)
        return out, new_state


class NoisyWrapper:
    """Seeded box jitter, score noise, drops and spurious boxes over another detector."""

    def __init__(
        self,
        inner,
        jitter_std: float = 0.0,
        score_std: float = 0.0,
        drop_rate: float = 0.0,
        spurious_rate: float = 0.0,
        seed: int = 0,
    ):
        for name, rate in (("drop_rate", drop_rate), ("spurious_rate", spurious_rate)):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} {rate} outside [0, 1]")
        if jitter_std < 0 or score_std < 0:
            raise ValueError("noise std must be >= 0")
        self.inner = inner
        self.jitter_std = jitter_std
        self.score_std = score_std
        self.drop_rate = drop_rate
        self.spurious_rate = spurious_rate
        self.seed = seed
        self.name = f"noisy-{inner.name}"
        self._categories: list[int] = []

    def init(self, categories, cfg=None) -> DetectorState:
        self._categories = sorted(categories) or [0]
        return self.inner.init(categories, cfg)

    def _perturb(self, det: Detection, rng: np.random.Generator) -> Detection:
        b = det.bbox
        if self.jitter_std > 0:
            j = rng.normal(0.0, self.jitter_std, 4)
            xs = sorted((b.x_min + j[0], b.x_max + j[2]))
            ys = sorted((b.y_min + j[1], b.y_max + j[3]))
            b = BoundingBox(xs[0], ys[0], xs[1], ys[1])
        score = det.score
        if self.score_std > 0:
            score = float(np.clip(score + rng.normal(0.0, self.score_std), 0.0, 1.0))
        return Detection(b, det.category, score)

    def step(self, window: Window, state: DetectorState) -> tuple[Forecasts, DetectorState]:
        forecasts, new_state = self.inner.step(window, state)
        # keyed by frame so equal inputs give equal outputs
        rng = substream(self.seed, self.name, window.current.frame_index)
        width, height = window.image_size or (1000, 1000)
        out: Forecasts = {}
        for k in sorted(forecasts):
            dets = []
            for det in forecasts[k]:
                if rng.random() < self.drop_rate:
                    continue
                dets.append(self._perturb(det, rng))
            if rng.random() < self.spurious_rate:
                w, h = rng.uniform(16, 96, 2)
                x, y = rng.uniform(0, max(width - w, 1)), rng.uniform(0, max(height - h, 1))
                cat = self._categories[int(rng.integers(len(self._categories)))]
                score = float(rng.uniform(0.0, 0.5))
                dets.append(Detection(BoundingBox(x, y, x + w, y + h), cat, score))
            out[k] = dets
        return out, new_state


DETECTORS = {
    "perfect": PerfectForecaster,
    "delayed": DelayedOracle,
    "cv": ConstantVelocityForecaster,
}


def make_detector(name: str, seed: int = 0, **noise) -> DetectorModel:
    """Build a detector by name; any non-zero noise option wraps it."""
    try:
        det = DETECTORS[name]()
    except KeyError:
        raise ValueError(f"unknown detector {name!r}; choose from {sorted(DETECTORS)}") from None
    if any(v for v in noise.values()):
        det = NoisyWrapper(det, seed=seed, **noise)
    return det

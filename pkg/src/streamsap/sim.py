"""Deterministic discrete-event simulation of a streaming detector."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .detectors import DetectorModel, DetectorState, Window, substream
from .model import (
    EmittedResult,
    FrameTruth,
    ResultTimeline,
    StreamScenario,
    WindowSpec,
    make_window,
)
from .streaming import KStepReport, StreamMode, StreamPolicy, TIME_EPS, streaming_ap

log = logging.getLogger(__name__)


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    kind: str = "constant"  # constant | gaussian_clamped | trace
    mean: float = 0.0
    std: float = 0.0
    floor: float = 1e-4
    trace: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "gaussian_clamped", "trace"):
            raise SimConfigError(f"unknown latency kind {self.kind!r}")
        if self.kind == "constant" and self.mean <= 0:
            raise SimConfigError("constant latency must be > 0")
        if self.kind == "gaussian_clamped" and (self.floor <= 0 or self.std < 0):
            raise SimConfigError("gaussian latency needs floor > 0 and std >= 0")
        if self.kind == "trace" and (not self.trace or min(self.trace) <= 0):
            raise SimConfigError("latency trace must be non-empty and positive")

    def sample(self, frame_index: int, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.mean
        if self.kind == "trace":
            return self.trace[frame_index % len(self.trace)]
        return max(self.floor, float(rng.normal(self.mean, self.std)))


@dataclass(frozen=True)
class SimConfig:
    policy: StreamPolicy = field(default_factory=StreamPolicy)
    window: WindowSpec = field(default_factory=WindowSpec)
    latency: LatencyModel = field(default_factory=lambda: LatencyModel("constant", 0.001))
    seed: int = 0

    def validate(self, frame_period: float) -> None:
        if (
            self.policy.mode is StreamMode.REAL_TIME
            and self.latency.kind == "constant"
            and self.latency.mean >= frame_period
        ):
            raise SimConfigError(
                f"real-time mode needs latency < frame period "
                f"({self.latency.mean:.4g}s >= {frame_period:.4g}s)"
            )


def _oracle(scenario: StreamScenario):
    def lookup(index: int) -> FrameTruth | None:
        if 0 <= index < len(scenario.frames):
            return scenario.frames[index]
        return None

    return lookup


def run(scenario: StreamScenario, detector: DetectorModel, cfg: SimConfig) -> ResultTimeline:
    """Simulate frame arrivals, detector latency and result emission.

    Real-time: every frame is processed in arrival order; a frame arriving
    while the previous one is still running waits, and results finishing
    after the next arrival are logged as deadline misses. Non-real-time:
    after each completion the most recently arrived frame is processed and
    older unprocessed ones are skipped. The detector state is updated only
    on processed frames.
    """
    cfg.validate(scenario.frame_period)
    rng = substream(cfg.seed, "latency", scenario.sequence_id)
    period = scenario.frame_period
    n_frames = len(scenario.frames)
    oracle = _oracle(scenario)
    state: DetectorState = detector.init(scenario.categories)
    K = cfg.policy.horizon

    results: list[EmittedResult] = []
    misses: list[int] = []
    last_updated = -1

    def process(f: int, start: float) -> float:
        nonlocal state, last_updated
        idx = make_window(scenario, f, cfg.window)
        window = Window(
            frames=tuple(scenario.frames[i] for i in idx),
            horizon=K,
            step=cfg.window.step,
            image_size=scenario.image_size,
            oracle=oracle,
        )
        forecasts, new_state = detector.step(window, state)
        if f <= last_updated:
            raise RuntimeError(f"detector state updated out of order at frame {f}")
        state = replace(new_state, last_updated=f)
        last_updated = f
        finish = start + cfg.latency.sample(f, rng)
        for k in range(1, K + 1):
            results.append(EmittedResult(f, k, tuple(forecasts.get(k, ())), finish))
        return finish

    if cfg.policy.mode is StreamMode.REAL_TIME:
        busy_until = 0.0
        for f in range(n_frames):
            arrival = scenario.time_of(f)
            finish = process(f, max(arrival, busy_until))
            if finish > arrival + period + TIME_EPS:
                misses.append(f)
                log.debug("frame %d missed its deadline (%.4fs late)", f, finish - arrival - period)
            busy_until = finish
    else:
        f, free_at = 0, 0.0
        while f < n_frames:
            free_at = process(f, max(scenario.time_of(f), free_at))
            # latest frame already arrived at completion; older ones are skipped
            latest = min(int(np.floor((free_at + TIME_EPS) / period)), n_frames - 1)
            f = latest if latest > f else f + 1

    results.sort(key=lambda r: r.emit_time)
    return ResultTimeline(scenario.sequence_id, tuple(results), tuple(misses))


def run_all(
    scenarios: Sequence[StreamScenario],
    detector: DetectorModel,
    cfg: SimConfig,
    jobs: int = 1,
) -> list[ResultTimeline]:
    if jobs <= 1 or len(scenarios) <= 1:
        return [run(sc, detector, cfg) for sc in scenarios]
    from concurrent.futures import ThreadPoolExecutor
    import copy

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        # one detector instance per sequence: detectors are single-consumer
        return list(pool.map(lambda sc: run(sc, copy.deepcopy(detector), cfg), scenarios))


GridCell = tuple[int, int | None]


def parse_grid(text: str) -> list[GridCell]:
    """Parse ``"0:-,1:1,2:1"`` into ``[(0, None), (1, 1), (2, 1)]``."""
    cells: list[GridCell] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        n, _, step = part.partition(":")
        cells.append((int(n), None if step in ("", "-") else int(step)))
    return cells


def cell_window(cell: GridCell) -> WindowSpec:
    n, step = cell
    return WindowSpec(n, 1 if step is None else step)


def sweep_window(
    scenarios: StreamScenario | Sequence[StreamScenario],
    detector: DetectorModel,
    cfg: SimConfig,
    grid: Iterable[GridCell],
    jobs: int = 1,
) -> dict[GridCell, KStepReport]:
    """One full simulation per (N, step) cell, scored on a common frame set.

    Every cell skips the same warm-up (the longest window span in the grid)
    so cells are compared on identical frames.
    """
    if isinstance(scenarios, StreamScenario):
        scenarios = [scenarios]
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    warmup = max(cfg.policy.warmup_frames, max(cell_window(c).span for c in grid))
    policy = replace(cfg.policy, warmup_frames=warmup)
    table = {}
    for cell in grid:
        cell_cfg = replace(cfg, window=cell_window(cell), policy=policy)
        timelines = run_all(scenarios, detector, cell_cfg, jobs)
        table[cell] = streaming_ap(timelines, scenarios, policy)
    return table

from __future__ import annotations

import time

import pytest

from streamsap.ingest import ObjectSpec, ScenarioSpec, generate_scenario
from streamsap.model import BoundingBox, Detection, FrameTruth, StreamScenario, TruthObject

PERIOD = 1.0 / 30.0
SESSION_START = time.perf_counter()

_criteria: list[tuple[str, str, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config.addinivalue_line("markers", "run_last: order this test after all others")


def pytest_collection_modifyitems(session, config, items):
    # the whole-suite runtime check has to observe every other test first
    last = [it for it in items if it.get_closest_marker("run_last")]
    rest = [it for it in items if not it.get_closest_marker("run_last")]
    items[:] = rest + last
    config._streamsap_modules = {it.module.__name__ for it in items if it.module is not None}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.append((marker.args[0], "PASS" if rep.passed else "FAIL", rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, seconds in _criteria:
        terminalreporter.write_line(f"{verdict}  {name}  ({seconds:.2f} s)")


# -- scenario builders ------------------------------------------------------


def box(x, y, w, h) -> BoundingBox:
    return BoundingBox.from_xywh(x, y, w, h)


def truth(x, y, w, h, cat=1, **kw) -> TruthObject:
    return TruthObject(box(x, y, w, h), cat, **kw)


def det(x, y, w, h, cat=1, score=1.0) -> Detection:
    return Detection(box(x, y, w, h), cat, score)


def moving_scene(
    velocity=(4.0, 0.0),
    acceleration=(0.0, 0.0),
    frames: int = 60,
    side: float = 64.0,
    sequence_id: str = "seq0",
) -> StreamScenario:
    """Two objects of different classes moving inside a 1920x1200 frame.

    The second object mirrors the first horizontally and is larger, so the
    scene spans the medium and large area strata.
    """
    vx, vy = velocity
    ax, ay = acceleration
    objs = (
        ObjectSpec(1, (200.0, 200.0, side, side), (vx, vy), (ax, ay)),
        ObjectSpec(2, (900.0, 500.0, 2 * side, 1.5 * side), (-vx, vy), (-ax, ay)),
    )
    return generate_scenario(ScenarioSpec(frames, objs, PERIOD, seed=0, sequence_id=sequence_id))


def mixed_scene(frames: int = 40, sequence_id: str = "mixed") -> StreamScenario:
    """Small, medium and large objects with staggered lifetimes."""
    objs = (
        ObjectSpec(1, (100.0, 100.0, 20.0, 20.0), (2.0, 1.0)),
        ObjectSpec(2, (400.0, 300.0, 60.0, 50.0), (-3.0, 0.0), spawn=5),
        ObjectSpec(3, (800.0, 600.0, 200.0, 150.0), (1.0, -2.0), despawn=30),
        ObjectSpec(1, (1200.0, 200.0, 40.0, 40.0), (0.0, 5.0), spawn=10, despawn=35),
    )
    return generate_scenario(ScenarioSpec(frames, objs, PERIOD, seed=0, sequence_id=sequence_id))


def static_scene(frames: int = 30, sequence_id: str = "static") -> StreamScenario:
    objs = [truth(100, 100, 50, 40, 1), truth(500, 300, 120, 100, 2), truth(50, 600, 20, 20, 1)]
    return StreamScenario(
        PERIOD,
        tuple(FrameTruth(i, i * PERIOD, tuple(objs)) for i in range(frames)),
        {1: "car", 2: "person"},
        sequence_id,
        (1920, 1200),
    )

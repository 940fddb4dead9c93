from __future__ import annotations

import pytest

from conftest import PERIOD, moving_scene, static_scene
from streamsap.detectors import DelayedOracle, DetectorState, PerfectForecaster, make_detector
from streamsap.model import WindowSpec
from streamsap.sim import (
    LatencyModel,
    SimConfig,
    SimConfigError,
    cell_window,
    parse_grid,
    run,
    run_all,
    sweep_window,
)
from streamsap.streaming import StreamMode, StreamPolicy, streaming_ap


class Spy:
    """Records every window it is stepped with."""

    name = "spy"

    def __init__(self):
        self.windows = []

    def init(self, categories, cfg=None):
        return DetectorState()

    def step(self, window, state):
        self.windows.append(window.indices)
        return {k: [] for k in range(1, window.horizon + 1)}, DetectorState(None, window.current.frame_index)


def cfg(latency, mode=StreamMode.REAL_TIME, K=1, window=WindowSpec(), seed=0, warmup=0):
    return SimConfig(StreamPolicy(mode, K, warmup), window, latency, seed)


def test_perfect_with_high_latency_real_time():
    sc = moving_scene(velocity=(8.0, 0.0))
    c = cfg(LatencyModel("constant", 0.9 * PERIOD))
    rep = streaming_ap(run(sc, PerfectForecaster(), c), sc, c.policy)
    assert rep.sap(1) == 1.0


def test_delayed_motion_declines_vs_static():
    c = cfg(LatencyModel("constant", 0.9 * PERIOD))
    moving = moving_scene(velocity=(8.0, 0.0))
    still = moving_scene(velocity=(0.0, 0.0))
    a = streaming_ap(run(moving, DelayedOracle(), c), moving, c.policy).sap(1)
    b = streaming_ap(run(still, DelayedOracle(), c), still, c.policy).sap(1)
    assert b == 1.0 and a < b


def test_real_time_emits_every_frame_once_per_horizon():
    sc = static_scene(10)
    tl = run(sc, Spy(), cfg(LatencyModel("constant", 0.5 * PERIOD), K=3))
    assert len(tl.results) == 30
    for r in tl.results:
        assert r.emit_time == pytest.approx((r.source_frame + 0.5) * PERIOD)
    assert tl.deadline_misses == ()


def test_real_time_queues_and_logs_misses():
    sc = static_scene(5)
    tl = run(sc, Spy(), cfg(LatencyModel("trace", trace=(1.5 * PERIOD,))))
    # frame f starts when f-1 finishes: finish_f = 1.5 * (f + 1) periods
    emits = [r.emit_time / PERIOD for r in tl.results]
    assert emits == pytest.approx([1.5, 3.0, 4.5, 6.0, 7.5])
    assert tl.deadline_misses == (0, 1, 2, 3, 4)


def test_constant_latency_over_period_rejected_in_real_time():
    with pytest.raises(SimConfigError):
        run(static_scene(3), Spy(), cfg(LatencyModel("constant", PERIOD)))


def test_non_real_time_skips_to_latest_frame():
    spy = Spy()
    sc = static_scene(16)
    run(sc, spy, cfg(LatencyModel("constant", 2.5 * PERIOD), StreamMode.NON_REAL_TIME))
    # completions at 2.5, 5, 7.5, 10, 12.5, 15 periods pick the newest arrival
    assert [w[0] for w in spy.windows] == [0, 2, 5, 7, 10, 12, 15]


def test_non_real_time_fast_detector_processes_every_frame():
    spy = Spy()
    run(static_scene(6), spy, cfg(LatencyModel("constant", 0.2 * PERIOD), StreamMode.NON_REAL_TIME))
    assert [w[0] for w in spy.windows] == list(range(6))


def test_window_passed_to_detector():
    spy = Spy()
    run(static_scene(6), spy, cfg(LatencyModel("constant", 0.5 * PERIOD), window=WindowSpec(2, 2)))
    assert spy.windows[0] == [0, 0, 0]
    assert spy.windows[5] == [5, 3, 1]


def test_n0_cell_sees_only_current_frame():
    spy = Spy()
    c = cfg(LatencyModel("constant", 0.5 * PERIOD))
    sweep_window(static_scene(6), spy, c, [(0, None)])
    assert all(len(w) == 1 for w in spy.windows)


def test_simulator_owns_last_updated():
    class Rewinder(Spy):
        def step(self, window, state):
            out, _ = super().step(window, state)
            return out, DetectorState(None, 0)

    # the simulator owns last_updated, so a detector cannot rewind it
    tl = run(static_scene(4), Rewinder(), cfg(LatencyModel("constant", 0.5 * PERIOD)))
    assert len(tl.results) == 4


def test_gaussian_latency_determinism():
    sc = moving_scene()
    c = cfg(LatencyModel("gaussian_clamped", 0.5 * PERIOD, 0.3 * PERIOD), K=2, seed=42)
    a, b = run(sc, DelayedOracle(), c), run(sc, DelayedOracle(), c)
    assert a == b
    other = run(sc, DelayedOracle(), cfg(c.latency, K=2, seed=43))
    assert other != a


def test_latency_model_validation():
    with pytest.raises(SimConfigError):
        LatencyModel("uniform", 1.0)
    with pytest.raises(SimConfigError):
        LatencyModel("constant", 0.0)
    with pytest.raises(SimConfigError):
        LatencyModel("trace")
    with pytest.raises(SimConfigError):
        LatencyModel("gaussian_clamped", 0.01, 0.01, floor=0.0)


def test_run_all_parallel_matches_serial():
    scs = [moving_scene(sequence_id=f"s{i}", velocity=(i + 1.0, 0.0)) for i in range(3)]
    c = cfg(LatencyModel("constant", 0.5 * PERIOD), K=2, window=WindowSpec(1, 1))
    det = make_detector("cv")
    assert run_all(scs, det, c, jobs=3) == run_all(scs, det, c, jobs=1)


def test_parse_grid():
    assert parse_grid("0:-,1:1, 2:2,") == [(0, None), (1, 1), (2, 2)]
    assert cell_window((0, None)) == WindowSpec(0, 1)
    with pytest.raises(ValueError):
        parse_grid("a:1")


def test_single_cell_sweep_equals_run():
    sc = moving_scene(acceleration=(0.5, 0.0))
    c = cfg(LatencyModel("constant", 0.5 * PERIOD), K=3, window=WindowSpec(2, 1), warmup=2)
    det = make_detector("cv")
    table = sweep_window(sc, det, c, [(2, 1)])
    direct = streaming_ap(run(sc, det, c), sc, c.policy)
    assert table[(2, 1)].to_dict() == direct.to_dict()


def test_sweep_history_ordering_on_acceleration():
    sc = moving_scene(velocity=(3.0, 1.0), acceleration=(0.4, 0.1), frames=90)
    c = cfg(LatencyModel("constant", 0.5 * PERIOD))
    table = sweep_window(sc, make_detector("cv"), c, parse_grid("0:-,1:1,2:1"))
    s0, s1, s2 = (table[cell].sap(1) for cell in [(0, None), (1, 1), (2, 1)])
    assert s2 >= s1 >= s0
    assert s1 > s0


def test_sweep_requires_cells():
    with pytest.raises(ValueError):
        sweep_window(static_scene(3), Spy(), cfg(LatencyModel("constant", 0.1 * PERIOD)), [])

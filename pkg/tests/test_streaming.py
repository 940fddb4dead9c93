from __future__ import annotations

import pytest

from conftest import PERIOD, det, static_scene, truth
from streamsap.model import EmittedResult, FrameTruth, ResultTimeline, StreamScenario
from streamsap.streaming import (
    KStepReport,
    StreamMode,
    StreamPolicy,
    associate,
    scored_pairs,
    streaming_ap,
)


def tagged_scene(n=8) -> StreamScenario:
    # one box per frame whose x position encodes the frame index
    frames = tuple(FrameTruth(i, i * PERIOD, (truth(100 * i, 0, 50, 50),)) for i in range(n))
    return StreamScenario(PERIOD, frames, {1: "obj"}, "tag")


def zero_latency_timeline(sc: StreamScenario, K: int) -> ResultTimeline:
    """Every source frame emits horizon k as a box tagged with the source index."""
    results = []
    for f in range(len(sc)):
        for k in range(1, K + 1):
            results.append(EmittedResult(f, k, (det(100 * f, 0, 50, 50),), f * PERIOD))
    return ResultTimeline(sc.sequence_id, tuple(results))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_real_time_pairs_with_source_t_minus_k(k):
    sc = tagged_scene()
    pairs = associate(zero_latency_timeline(sc, 3), sc, k, StreamPolicy(horizon=3))
    for p in pairs:
        if p.frame_index < k:
            assert p.detections == () and p.source_frame is None
        else:
            assert p.source_frame == p.frame_index - k
            assert p.detections[0].bbox.x_min == 100 * (p.frame_index - k)


def test_first_frame_is_empty():
    sc = tagged_scene()
    pairs = associate(zero_latency_timeline(sc, 1), sc, 1)
    assert pairs[0].detections == ()
    assert len(pairs) == len(sc)


def test_late_result_is_not_used_in_real_time():
    sc = tagged_scene(4)
    # source 1 finishes after frame 2 arrived: frame 2 gets nothing
    tl = ResultTimeline(
        "tag",
        (
            EmittedResult(0, 1, (det(0, 0, 50, 50),), 0.5 * PERIOD),
            EmittedResult(1, 1, (det(100, 0, 50, 50),), 2.2 * PERIOD),
            EmittedResult(2, 1, (det(200, 0, 50, 50),), 2.9 * PERIOD),
        ),
    )
    rt = associate(tl, sc, 1, StreamPolicy(StreamMode.REAL_TIME))
    assert [p.source_frame for p in rt] == [None, 0, None, 2]
    nrt = associate(tl, sc, 1, StreamPolicy(StreamMode.NON_REAL_TIME))
    assert [p.source_frame for p in nrt] == [None, 0, 0, 2]


def test_emit_exactly_at_timestamp_counts():
    sc = tagged_scene(3)
    tl = ResultTimeline("tag", (EmittedResult(0, 1, (det(0, 0, 50, 50),), 1 * PERIOD),))
    assert associate(tl, sc, 1)[1].source_frame == 0


def test_non_real_time_tie_goes_to_larger_source():
    sc = tagged_scene(3)
    tl = ResultTimeline(
        "tag",
        (
            EmittedResult(0, 1, (det(0, 0, 50, 50),), 1.5 * PERIOD),
            EmittedResult(1, 1, (det(100, 0, 50, 50),), 1.5 * PERIOD),
        ),
    )
    pairs = associate(tl, sc, 1, StreamPolicy(StreamMode.NON_REAL_TIME))
    assert pairs[2].source_frame == 1


def test_associate_validates_k():
    sc = tagged_scene(3)
    with pytest.raises(ValueError):
        associate(ResultTimeline("tag"), sc, 2, StreamPolicy(horizon=1))
    with pytest.raises(ValueError):
        associate(ResultTimeline("tag"), sc, 0)


def test_policy_validation():
    with pytest.raises(ValueError):
        StreamPolicy(horizon=0)
    with pytest.raises(ValueError):
        StreamPolicy(warmup_frames=-1)


def test_scored_pairs_drops_leading_frames():
    sc = tagged_scene(10)
    pairs = associate(zero_latency_timeline(sc, 2), sc, 2, StreamPolicy(horizon=2))
    kept = scored_pairs(pairs, 2, StreamPolicy(horizon=2, warmup_frames=3))
    assert len(kept) == 10 - 5


def test_zero_latency_exact_results_score_one():
    sc = static_scene(12)
    results = []
    for f in range(len(sc)):
        dets = tuple(det(*o.bbox.to_xywh(), o.category, 0.9) for o in sc.frames[f].objects)
        for k in (1, 2, 3):
            results.append(EmittedResult(f, k, dets, f * PERIOD))
    rep = streaming_ap(ResultTimeline(sc.sequence_id, tuple(results)), sc, StreamPolicy(horizon=3))
    assert rep.curve() == [1.0, 1.0, 1.0]


def test_tagged_stream_misaligned_scores_zero():
    # boxes move 100 px per frame, far beyond their 50 px size
    sc = tagged_scene(10)
    rep = streaming_ap(zero_latency_timeline(sc, 2), sc, StreamPolicy(horizon=2))
    assert rep.curve() == [0.0, 0.0]


def test_empty_timeline_scores_zero():
    sc = static_scene(5)
    rep = streaming_ap(ResultTimeline(sc.sequence_id), sc, StreamPolicy())
    assert rep.sap(1) == 0.0


def test_multiple_sequences_are_pooled():
    a, b = static_scene(6, "a"), static_scene(6, "b")
    good = []
    for f in range(6):
        dets = tuple(det(*o.bbox.to_xywh(), o.category) for o in a.frames[f].objects)
        good.append(EmittedResult(f, 1, dets, f * PERIOD))
    rep = streaming_ap([ResultTimeline("a", tuple(good)), ResultTimeline("b")], [a, b], StreamPolicy())
    assert rep.per_sequence["a"][1].ap == 1.0
    assert rep.per_sequence["b"][1].ap == 0.0
    assert 0.0 < rep.sap(1) < 1.0


def test_kstep_report_contract_and_round_trip():
    sc = static_scene(6)
    rep = streaming_ap(zero_latency_timeline(sc, 2), sc, StreamPolicy(horizon=2))
    assert rep.horizon == 2
    assert KStepReport.from_dict(rep.to_dict()).curve() == rep.curve()
    with pytest.raises(ValueError):
        KStepReport({1: rep.reports[1], 3: rep.reports[2]})

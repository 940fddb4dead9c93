"""Latency-aware association of emitted results and the K-step sAP metric."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .matching import APReport, evaluate
from .model import Detection, EmittedResult, ResultTimeline, StreamScenario, TruthObject

# absorbs float noise in frame_index * frame_period arithmetic
TIME_EPS = 1e-9


class StreamMode(str, enum.Enum):
    REAL_TIME = "real_time"
    NON_REAL_TIME = "non_real_time"


@dataclass(frozen=True)
class StreamPolicy:
    mode: StreamMode = StreamMode.REAL_TIME
    horizon: int = 1
    # leading frames excluded from scoring on top of the k frames that no
    # source can target; used to skip clamped-window start-up
    warmup_frames: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon K must be >= 1")
        if self.warmup_frames < 0:
            raise ValueError("warmup_frames must be >= 0")
        object.__setattr__(self, "mode", StreamMode(self.mode))


@dataclass(frozen=True)
class PairedFrame:
    frame_index: int
    detections: tuple[Detection, ...]
    truths: tuple[TruthObject, ...]
    source_frame: int | None = None


@dataclass
class KStepReport:
    reports: dict[int, APReport]
    per_sequence: dict[str, dict[int, APReport]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if sorted(self.reports) != list(range(1, len(self.reports) + 1)):
            raise ValueError(f"K-step report keys must be 1..K, got {sorted(self.reports)}")

    @property
    def horizon(self) -> int:
        return len(self.reports)

    def sap(self, k: int) -> float | None:
        return self.reports[k].ap

    def curve(self) -> list[float | None]:
        return [self.reports[k].ap for k in range(1, self.horizon + 1)]

    def to_dict(self) -> dict:
        return {
            "reports": {str(k): r.to_dict() for k, r in sorted(self.reports.items())},
            "per_sequence": {
                sid: {str(k): r.to_dict() for k, r in sorted(reps.items())}
                for sid, reps in sorted(self.per_sequence.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KStepReport":
        return cls(
            reports={int(k): APReport.from_dict(v) for k, v in d["reports"].items()},
            per_sequence={
                sid: {int(k): APReport.from_dict(v) for k, v in reps.items()}
                for sid, reps in d.get("per_sequence", {}).items()
            },
        )


def _pick(candidates: Iterable[EmittedResult]) -> EmittedResult | None:
    best = None
    for r in candidates:
        if best is None or (r.emit_time, r.source_frame) > (best.emit_time, best.source_frame):
            best = r
    return best


def associate(
    timeline: ResultTimeline,
    scenario: StreamScenario,
    k: int,
    policy: StreamPolicy | None = None,
) -> list[PairedFrame]:
    """Pair every ground-truth frame with the result available at its time.

    Real-time: frame ``j`` takes the horizon-``k`` result whose source is
    ``j - k`` if it was emitted by ``j``'s timestamp. Non-real-time: frame
    ``j`` takes the latest horizon-``k`` result emitted by then, whatever its
    source. Frames with nothing available pair with no detections.
    """
    policy = policy or StreamPolicy(horizon=k)
    if not 1 <= k <= policy.horizon:
        raise ValueError(f"k={k} outside 1..{policy.horizon}")
    for a, b in zip(timeline.results, timeline.results[1:]):
        if b.emit_time < a.emit_time:
            raise ValueError("timeline must be sorted by emit_time")

    by_horizon = [r for r in timeline.results if r.horizon == k]
    out = []
    if policy.mode is StreamMode.REAL_TIME:
        by_target: dict[int, list[EmittedResult]] = {}
        for r in by_horizon:
            by_target.setdefault(r.target_frame, []).append(r)
        for fr in scenario.frames:
            tau = fr.timestamp + TIME_EPS
            chosen = _pick(r for r in by_target.get(fr.frame_index, ()) if r.emit_time <= tau)
            out.append(_paired(fr, chosen))
    else:
        pos = 0
        chosen = None
        for fr in scenario.frames:
            tau = fr.timestamp + TIME_EPS
            while pos < len(by_horizon) and by_horizon[pos].emit_time <= tau:
                r = by_horizon[pos]
                if chosen is None or (r.emit_time, r.source_frame) > (chosen.emit_time, chosen.source_frame):
                    chosen = r
                pos += 1
            out.append(_paired(fr, chosen))
    return out


def _paired(frame, chosen: EmittedResult | None) -> PairedFrame:
    if chosen is None:
        return PairedFrame(frame.frame_index, (), frame.objects, None)
    return PairedFrame(frame.frame_index, chosen.detections, frame.objects, chosen.source_frame)


def scored_pairs(
    pairs: Sequence[PairedFrame], k: int, policy: StreamPolicy
) -> list[tuple[tuple[Detection, ...], tuple[TruthObject, ...]]]:
    """Drop frames no result could ever target (``j < k``) plus warm-up."""
    start = k + policy.warmup_frames
    return [(p.detections, p.truths) for p in pairs if p.frame_index >= start]


def streaming_ap(
    timelines: ResultTimeline | Sequence[ResultTimeline],
    scenarios: StreamScenario | Sequence[StreamScenario],
    policy: StreamPolicy,
    max_dets: int | None = None,
) -> KStepReport:
    """sAP_k for k = 1..K; sequences are pooled before AP is computed."""
    if isinstance(timelines, ResultTimeline):
        timelines = [timelines]
    if isinstance(scenarios, StreamScenario):
        scenarios = [scenarios]
    by_id = {tl.sequence_id: tl for tl in timelines}
    categories = sorted({c for sc in scenarios for c in sc.categories}) or None

    reports: dict[int, APReport] = {}
    per_seq: dict[str, dict[int, APReport]] = {}
    for k in range(1, policy.horizon + 1):
        pooled = []
        for sc in scenarios:
            tl = by_id.get(sc.sequence_id, ResultTimeline(sc.sequence_id))
            pairs = scored_pairs(associate(tl, sc, k, policy), k, policy)
            pooled.extend(pairs)
            if len(scenarios) > 1:
                per_seq.setdefault(sc.sequence_id, {})[k] = evaluate(pairs, categories, max_dets)
        reports[k] = evaluate(pooled, categories, max_dets)
    if len(scenarios) == 1:
        per_seq[scenarios[0].sequence_id] = dict(reports)
    return KStepReport(reports=reports, per_sequence=per_seq)

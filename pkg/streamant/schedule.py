#
# schedule.py
#
"""
Closed-form streaming scheduling.

A streaming model first waits ``tau_o`` to fill its buffer, then runs back
to back, finishing an inference every ``tau_r``: the prediction finished at
slot ``k >= 1`` becomes available at ``tau_o + k*tau_r`` and was computed on
the window ending at ``tau_o + (k-1)*tau_r``. A segment starting at ``s`` is
scored with the most recent prediction available at ``s - tau_a``; the end of
that prediction's input window is::

    t* = floor((s - tau_a - tau_o) / tau_r) * tau_r + tau_o - tau_r

All arithmetic is on integer ticks, so the floor is exact.
"""
import typing
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import ActionSegment, PredictionRecord, ScoreVector, Tick, TimingConfig
from .exceptions import ContractError

FallbackPolicy = Callable[[ActionSegment], ScoreVector]


class EvaluationMode(Enum):
    OFFLINE = "offline"
    STREAMING = "streaming"


def offline_window(s_i: Tick, cfg: TimingConfig) -> Tuple[Tick, Tick]:
    """
    Observed window of the ideal, zero-runtime protocol:
    ``(s - tau_a - tau_o, s - tau_a)``. The start may be negative for
    segments near the beginning of a video.
    """
    end = s_i - cfg.anticipation
    return end - cfg.observation, end


def slot_times(cfg: TimingConfig, horizon: Tick) -> List[Tick]:
    """
    Availability times ``tau_o + k*tau_r`` (``k >= 1``) not later than ``horizon``.
    """
    if horizon < 0:
        raise ContractError("horizon must be >= 0")
    count = max(0, (horizon - cfg.observation) // cfg.runtime)
    return [cfg.observation + k * cfg.runtime for k in range(1, count + 1)]


def slot_index(s_i: Tick, cfg: TimingConfig) -> int:
    """the floor term of the quantization formula; the slot whose prediction scores ``s_i``"""
    return (s_i - cfg.anticipation - cfg.observation) // cfg.runtime


def quantize_timestamp(s_i: Tick, cfg: TimingConfig) -> Optional[Tick]:
    """
    End of the input window of the most recent prediction available at
    ``s_i - tau_a``, or ``None`` when no prediction can exist by then (the
    segment is then scored with a fallback guess).

    A slot index below 1 is infeasible: slot 0 would have an input window
    ending at ``tau_o - tau_r``, before the first full buffer exists.

    Example::

        cfg = TimingConfig.from_seconds("2.75", "1", runtime_ms="725")
        quantize_timestamp(10_000_000, cfg)  # -> 7825000
    """
    k = slot_index(s_i, cfg)
    if k < 1:
        return None
    return k * cfg.runtime + cfg.observation - cfg.runtime


def availability(t_star: Tick, cfg: TimingConfig) -> Tick:
    return t_star + cfg.runtime


def effective_anticipation(s_i: Tick, cfg: TimingConfig) -> Optional[Tick]:
    """lead time of the streaming prediction for a segment starting at ``s_i``"""
    t_star = quantize_timestamp(s_i, cfg)
    if t_star is None:
        return None
    return s_i - availability(t_star, cfg)


def naive_effective_anticipation(cfg: TimingConfig) -> Tick:
    """lead time obtained when the offline window is used and runtime is ignored"""
    return cfg.anticipation - cfg.runtime


@dataclass(frozen=True)
class EvaluationQuery:
    segment: ActionSegment
    config: TimingConfig
    mode: EvaluationMode

    def window(self) -> Optional[Tuple[Tick, Tick]]:
        if self.mode is EvaluationMode.OFFLINE:
            return offline_window(self.segment.start, self.config)
        t_star = quantize_timestamp(self.segment.start, self.config)
        if t_star is None:
            return None
        return t_star - self.config.observation, t_star


class UniformFallback:
    """
    Default fallback policy: a uniformly random action ranking, seeded per
    ``(seed, video_id, segment start)`` so that the guess for a segment does
    not depend on the order in which segments are evaluated.
    """

    def __init__(self, size: int, seed: int = 0):
        if size <= 0:
            raise ContractError("fallback needs a nonempty vocabulary")
        self.size = size
        self.seed = seed

    def __call__(self, segment: ActionSegment) -> ScoreVector:
        # str hash() is salted per process
        rng = np.random.default_rng(
            [self.seed, zlib.crc32(segment.video_id.encode("utf-8")), segment.start & 0xFFFFFFFFFFFF]
        )
        return ScoreVector.from_logits(rng.random(self.size))


def fallback_record(segment: ActionSegment, cfg: TimingConfig, scores: ScoreVector) -> PredictionRecord:
    deadline = segment.start - cfg.anticipation
    return PredictionRecord(deadline, deadline, deadline, scores, is_fallback=True)


def _check_sorted(values: Sequence[int], what: str) -> None:
    if any(a > b for a, b in zip(values, values[1:])):
        raise ContractError(f"{what} must be sorted")


def associate(
    segments: Sequence[ActionSegment],
    records: Sequence[PredictionRecord],
    cfg: TimingConfig,
    fallback: typing.Optional[FallbackPolicy] = None,
) -> List[Tuple[ActionSegment, Optional[PredictionRecord]]]:
    """
    Pair every segment with the record having the largest ``available_at``
    not later than ``start - tau_a`` (inclusive deadline). Segments with no
    such record get a fallback record built from ``fallback``, or ``None``
    when no policy is given.

    ``segments`` must be sorted by start and ``records`` by ``available_at``;
    both are swept once.
    """
    _check_sorted([s.start for s in segments], "segments")
    _check_sorted([r.available_at for r in records], "records")
    ret: List[Tuple[ActionSegment, Optional[PredictionRecord]]] = []
    latest: Optional[PredictionRecord] = None
    pos = 0
    for seg in segments:
        deadline = seg.start - cfg.anticipation
        while pos < len(records) and records[pos].available_at <= deadline:
            latest = records[pos]
            pos += 1
        if latest is not None:
            ret.append((seg, latest))
        elif fallback is not None:
            ret.append((seg, fallback_record(seg, cfg, fallback(seg))))
        else:
            ret.append((seg, None))
    return ret

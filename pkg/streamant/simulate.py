#
# simulate.py
#
"""
Discrete-event streaming simulator.

The simulator plays a video timeline forward with a single compute
resource: the buffer is full at ``tau_o``, the first inference starts then,
and every completed inference immediately starts the next one on the most
recent ``tau_o`` window. It is deliberately written without the closed-form
formula so that it can serve as the oracle for :func:`quantize_timestamp`.
"""
import heapq
import logging
import typing
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ActionSegment,
    PredictionRecord,
    ScoreVector,
    Tick,
    TimingConfig,
    group_by_video,
)
from .exceptions import ContractError
from .schedule import quantize_timestamp
from .util import seconds_to_ticks

logger = logging.getLogger(__name__)

# probability mass given to the top-5 of a synthetic oracle prediction; the
# remaining mass is spread evenly over the other classes
TOP_MASSES = (0.5, 0.2, 0.15, 0.1, 0.05)
BACKGROUND_MASS = 1e-3


class DegradationCurve:
    """
    Piecewise-linear map from window offset (ticks by which an observed
    window ends before the ideal one) to the probability that a synthetic
    oracle ranks the true class in its top-5. Offsets beyond the table are
    clamped to the nearest end point.
    """

    def __init__(self, points: Sequence[Tuple[Tick, float]]):
        if not points:
            raise ContractError("a degradation curve needs at least one point")
        offsets = np.array([p[0] for p in points], dtype=np.float64)
        accs = np.array([p[1] for p in points], dtype=np.float64)
        if (offsets < 0).any() or (np.diff(offsets) <= 0).any():
            raise ContractError("degradation offsets must be >= 0 and strictly increasing")
        if (accs < 0).any() or (accs > 1).any():
            raise ContractError("degradation accuracies must be in [0, 1]")
        self.offsets = offsets
        self.accuracies = accs

    @classmethod
    def constant(cls, accuracy: float) -> "DegradationCurve":
        return cls([(0, accuracy)])

    @classmethod
    def from_text(cls, text: str, ticks_per_second: int = 1_000_000) -> "DegradationCurve":
        """
        Parse ``"offset_s:accuracy,..."``, e.g. ``"0:0.9,1.5:0.2"``.
        """
        from .formats import parse_degradation

        return cls(
            [(seconds_to_ticks(off, ticks_per_second), acc) for off, acc in parse_degradation(text)]
        )

    def __call__(self, offset: Tick) -> float:
        if offset < 0:
            raise ContractError("offset must be >= 0")
        return float(np.interp(offset, self.offsets, self.accuracies))

    def __repr__(self):
        pts = ", ".join(f"({int(o)}, {a:g})" for o, a in zip(self.offsets, self.accuracies))
        return f"DegradationCurve([{pts}])"


def _window_rng(seed: int, video_id: str, window_end: Tick) -> np.random.Generator:
    return np.random.default_rng(
        [seed & 0xFFFFFFFF, zlib.crc32(video_id.encode("utf-8")), window_end & 0xFFFFFFFFFFFF]
    )


def _ranked_probabilities(size: int, ranking: Sequence[int]) -> ScoreVector:
    kk = len(ranking)
    masses = np.array(TOP_MASSES[:kk], dtype=np.float64)
    masses /= masses.sum()
    if size > kk:
        probs = np.full(size, BACKGROUND_MASS / (size - kk))
        probs[list(ranking)] = masses * (1.0 - BACKGROUND_MASS)
    else:
        probs = np.zeros(size)
        probs[list(ranking)] = masses
    return ScoreVector(probs)


def oracle_lookup(
    t: Tick,
    segments: Sequence[ActionSegment],
    degradation: DegradationCurve,
    seed: int,
    *,
    vocabulary_size: int,
    anticipation: Tick = 0,
    k: int = 5,
    video_id: str = "",
) -> ScoreVector:
    """
    Synthetic prediction for a window ending at ``t``.

    The target is the first segment starting at or after ``t + anticipation``;
    its offset is how far ``t`` lies before the ideal window end
    ``start - anticipation``. With probability ``degradation(offset)`` the
    target class is ranked first, otherwise the top-``k`` is a uniformly
    random set of classes (which may contain the target by chance). With no
    upcoming segment the prediction is uniform.
    """
    if vocabulary_size <= 0:
        raise ContractError("vocabulary_size must be > 0")
    target = next((s for s in segments if s.start >= t + anticipation), None)
    if target is None:
        return ScoreVector.uniform(vocabulary_size)
    offset = target.start - anticipation - t
    rng = _window_rng(seed, video_id or target.video_id, t)
    kk = min(k, vocabulary_size)
    if rng.random() < degradation(offset):
        others = np.delete(np.arange(vocabulary_size), target.action_id)
        ranking = [target.action_id] + list(rng.choice(others, kk - 1, replace=False))
    else:
        ranking = list(rng.choice(vocabulary_size, kk, replace=False))
    return _ranked_probabilities(vocabulary_size, ranking)


class StubModel(ABC):
    """
    Abstract stand-in for an anticipation network. ``predict`` must be a pure
    function of ``(seed, video_id, window)`` so that traces are reproducible
    and a window yields the same scores whichever protocol asks for it.
    """

    kind: str = "stub"

    def __init__(self, vocabulary_size: int, seed: int = 0):
        if vocabulary_size <= 0:
            raise ContractError("vocabulary_size must be > 0")
        self.vocabulary_size = vocabulary_size
        self.seed = seed

    @abstractmethod
    def predict(self, video_id: str, window_start: Tick, window_end: Tick) -> ScoreVector:
        """scores for the window ``[window_start, window_end]`` of ``video_id``"""

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, seed={self.seed})"


class OracleModel(StubModel):
    """oracle whose top-5 accuracy follows a :class:`DegradationCurve` of the window offset"""

    kind = "oracle"

    def __init__(
        self,
        segments: Sequence[ActionSegment],
        vocabulary_size: int,
        degradation: typing.Optional[DegradationCurve] = None,
        *,
        anticipation: Tick = 0,
        seed: int = 0,
        k: int = 5,
    ):
        super().__init__(vocabulary_size, seed)
        self.segments = group_by_video(segments)
        self.degradation = degradation or DegradationCurve.constant(1.0)
        self.anticipation = anticipation
        self.k = k

    def predict(self, video_id, window_start, window_end):
        return oracle_lookup(
            window_end,
            self.segments.get(video_id, ()),
            self.degradation,
            self.seed,
            vocabulary_size=self.vocabulary_size,
            anticipation=self.anticipation,
            k=self.k,
            video_id=video_id,
        )


class NoisyOracleModel(OracleModel):
    kind = "noisy-oracle"

    def __init__(self, segments, vocabulary_size, noise: float, **kwargs):
        if not 0 <= noise <= 1:
            raise ContractError("noise rate must be in [0, 1]")
        super().__init__(
            segments, vocabulary_size, DegradationCurve.constant(1.0 - noise), **kwargs
        )
        self.noise = noise


def class_frequencies(segments: Sequence[ActionSegment], vocabulary_size: int) -> np.ndarray:
    return np.bincount(
        np.array([s.action_id for s in segments], dtype=np.intp), minlength=vocabulary_size
    ).astype(np.float64)


class ConstantModel(StubModel):
    """always ranks classes by training frequency (ties: lowest index)"""

    kind = "constant"

    def __init__(self, train_segments: Sequence[ActionSegment], vocabulary_size: int, seed=0):
        super().__init__(vocabulary_size, seed)
        counts = class_frequencies(train_segments, vocabulary_size)
        if counts.sum() == 0:
            raise ContractError("constant model needs a nonempty training set")
        self._scores = ScoreVector(counts / counts.sum())

    def predict(self, video_id, window_start, window_end):
        return self._scores


class TrainingDistributionModel(StubModel):
    """
    ranks classes by sampling without replacement from the training
    distribution (Gumbel top-k); unseen classes share ``-inf``
    """

    kind = "training-distribution"

    def __init__(self, train_segments: Sequence[ActionSegment], vocabulary_size: int, seed=0):
        super().__init__(vocabulary_size, seed)
        counts = class_frequencies(train_segments, vocabulary_size)
        if counts.sum() == 0:
            raise ContractError("training-distribution model needs a nonempty training set")
        with np.errstate(divide="ignore"):
            self._log_p = np.log(counts / counts.sum())

    def predict(self, video_id, window_start, window_end):
        rng = _window_rng(self.seed, video_id, window_end)
        return ScoreVector.from_logits(self._log_p + rng.gumbel(size=self.vocabulary_size))


class UniformRandomModel(StubModel):
    kind = "uniform-random"

    def predict(self, video_id, window_start, window_end):
        rng = _window_rng(self.seed, video_id, window_end)
        return ScoreVector.from_logits(rng.random(self.vocabulary_size))


@dataclass(frozen=True)
class SimulationTrace:
    config: TimingConfig
    records: Tuple[PredictionRecord, ...]
    horizon: Tick
    video_id: str = ""

    def __len__(self):
        return len(self.records)

    def inference_intervals(self) -> List[Tuple[Tick, Tick]]:
        return [(r.available_at - self.config.runtime, r.available_at) for r in self.records]

    def check(self) -> None:
        """validate ordering, slot spacing and record windows"""
        prev = None
        for rec in self.records:
            rec.check(self.config)
            if rec.available_at > self.horizon:
                raise ContractError("record available after the horizon")
            if prev is not None and rec.available_at - prev.available_at != self.config.runtime:
                raise ContractError("consecutive records are not one runtime apart")
            prev = rec


@dataclass(order=True)
class _ScheduledEvent:
    """
    Heap item ordering policy:
    1. 'time'
    2. 'priority' (lower value wins)
    3. 'seq_no' (submission order tie-break)
    """

    time: Tick
    priority: int
    seq_no: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class StreamSimulator:
    """
    Deterministic single-resource event loop. Only one inference can be in
    flight; a new inference starts on completion of the previous one, on
    the window ending at the completion time.
    """

    BUFFER_FULL = "buffer-full"
    INFERENCE_DONE = "inference-done"

    def __init__(self, cfg: TimingConfig, horizon: Tick):
        if horizon < 0:
            raise ContractError("horizon must be >= 0")
        self.cfg = cfg
        self.horizon = horizon
        self.now: Tick = 0
        self._queue: List[_ScheduledEvent] = []
        self._next_seq = 1
        self._busy_until: Optional[Tick] = None

    def schedule(self, time: Tick, kind: str, payload=None, priority: int = 0) -> None:
        if time < self.now:
            raise ContractError("cannot schedule in the past")
        heapq.heappush(self._queue, _ScheduledEvent(time, priority, self._next_seq, kind, payload))
        self._next_seq += 1

    def _start_inference(self) -> None:
        if self._busy_until is not None and self._busy_until > self.now:
            raise ContractError("compute resource already busy")
        window = (self.now - self.cfg.observation, self.now)
        self._busy_until = self.now + self.cfg.runtime
        self.schedule(self._busy_until, self.INFERENCE_DONE, window)

    def run(self, model: typing.Optional[StubModel] = None, video_id: str = "") -> SimulationTrace:
        records: List[PredictionRecord] = []
        self.schedule(self.cfg.observation, self.BUFFER_FULL)
        while self._queue:
            event = heapq.heappop(self._queue)
            if event.time > self.horizon:
                break
            self.now = event.time
            if event.kind == self.BUFFER_FULL:
                self._start_inference()
            elif event.kind == self.INFERENCE_DONE:
                start, end = event.payload
                scores = model.predict(video_id, start, end) if model is not None else None
                records.append(PredictionRecord(start, end, self.now, scores))
                self._start_inference()
        self._queue.clear()
        return SimulationTrace(self.cfg, tuple(records), self.horizon, video_id)


def run_stream(
    model: typing.Optional[StubModel],
    segments: Sequence[ActionSegment],
    cfg: TimingConfig,
    horizon: Tick,
    *,
    video_id: typing.Optional[str] = None,
) -> SimulationTrace:
    """
    Simulate ``model`` streaming over one video up to ``horizon``. The video
    id is taken from ``segments`` unless given; ``model=None`` produces a
    timing-only trace.
    """
    if video_id is None:
        ids = {s.video_id for s in segments}
        if len(ids) > 1:
            raise ContractError("run_stream simulates one video at a time")
        video_id = ids.pop() if ids else ""
    trace = StreamSimulator(cfg, horizon).run(model, video_id)
    logger.debug("simulated %s: %d records up to %d", video_id or "<video>", len(trace), horizon)
    return trace


def oracle_quantize(s_i: Tick, cfg: TimingConfig) -> Optional[Tick]:
    """input end of the latest simulated record available at ``s_i - tau_a``"""
    deadline = s_i - cfg.anticipation
    if deadline < 0:
        return None
    trace = StreamSimulator(cfg, deadline).run()
    return trace.records[-1].input_end if trace.records else None


def random_tick_case(rng: np.random.Generator) -> Tuple[Tick, TimingConfig]:
    """
    A random ``(s_i, config)`` pair. Half of the cases use tiny tick values so
    that exact slot boundaries are hit often.
    """
    if rng.random() < 0.5:
        obs = int(rng.integers(1, 20))
        ant = int(rng.integers(0, 10))
        run = int(rng.integers(1, 8))
        s_i = int(rng.integers(0, 120))
    else:
        obs = int(rng.integers(1, 5_000_001))
        ant = int(rng.integers(0, 2_000_001))
        run = int(rng.integers(20_000, 1_500_001))
        s_i = int(rng.integers(0, 20_000_001))
    return s_i, TimingConfig(obs, ant, run)


@dataclass
class ScheduleVerification:
    cases: int = 0
    exact: int = 0
    multiple_cases: int = 0
    multiple_exact: int = 0
    mismatches: List[Tuple[Tick, TimingConfig, Optional[Tick], Optional[Tick]]] = field(
        default_factory=list
    )

    @property
    def passed(self) -> bool:
        return self.exact == self.cases and self.multiple_exact == self.multiple_cases

    def summary(self) -> str:
        return (
            f"{self.exact}/{self.cases} exact\n"
            f"{self.multiple_exact}/{self.multiple_cases} exact-multiple"
        )


def verify_schedule(cases: int = 10_000, seed: int = 0, multiples: int = 1_000) -> ScheduleVerification:
    """
    Compare :func:`quantize_timestamp` with the simulator on ``cases`` random
    tick configurations, and check the exact-multiple law
    ``t* = s - tau_a - tau_r`` on ``multiples`` constructed cases.
    """
    rng = np.random.default_rng(seed)
    result = ScheduleVerification()
    for _ in range(cases):
        s_i, cfg = random_tick_case(rng)
        closed = quantize_timestamp(s_i, cfg)
        simulated = oracle_quantize(s_i, cfg)
        result.cases += 1
        if closed == simulated:
            result.exact += 1
        else:
            result.mismatches.append((s_i, cfg, closed, simulated))
    for _ in range(multiples):
        cfg = TimingConfig(
            int(rng.integers(1, 3_000_001)),
            int(rng.integers(0, 2_000_001)),
            int(rng.integers(1, 1_000_001)),
        )
        m = int(rng.integers(1, 50))
        s_i = cfg.anticipation + cfg.observation + m * cfg.runtime
        result.multiple_cases += 1
        if quantize_timestamp(s_i, cfg) == s_i - cfg.anticipation - cfg.runtime:
            result.multiple_exact += 1
    logger.info("schedule verification: %s", result.summary().replace("\n", "; "))
    return result


def simulate_videos(
    model: typing.Optional[StubModel],
    segments: Sequence[ActionSegment],
    cfg: TimingConfig,
    horizons: typing.Optional[Dict[str, Tick]] = None,
) -> Dict[str, SimulationTrace]:
    """
    One trace per video. Without explicit horizons, each video is simulated
    up to its last segment's deadline ``start - tau_a``.
    """
    ret = {}
    for video_id, segs in group_by_video(segments).items():
        if horizons is not None and video_id in horizons:
            horizon = horizons[video_id]
        else:
            horizon = max(0, max(s.start for s in segs) - cfg.anticipation)
        ret[video_id] = run_stream(model, segs, cfg, horizon, video_id=video_id)
    return ret

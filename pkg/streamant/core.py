#
# core.py
#
import os
import sys
import typing
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ContractError, DataFormatError
from .util import (
    TICKS_PER_SECOND,
    Seconds,
    __config_flags,
    milliseconds_to_ticks,
    seconds_to_ticks,
    ticks_to_seconds,
)

Tick = int
"""signed integer count of ticks (microseconds at the default resolution)"""

PROBABILITY_TOLERANCE = 1e-6


class __diag__(__config_flags):
    _type_desc = "diagnostic"

    warn_on_rejected_rows = False
    warn_on_fallback_predictions = False
    warn_on_clamped_similarity = False
    warn_on_sparse_dump_lookup = False
    enable_debug_on_evaluation = False

    _all_names = [__ for __ in locals() if not __.startswith("_")]
    _warning_names = [name for name in _all_names if name.startswith("warn")]
    _debug_names = [name for name in _all_names if name.startswith("enable_debug")]

    @classmethod
    def enable_all_warnings(cls) -> None:
        for name in cls._warning_names:
            cls.enable(name)


class Diagnostics(Enum):
    """
    Diagnostic configuration (all default to disabled)

    - ``warn_on_rejected_rows`` - warn for every annotation row rejected while loading
    - ``warn_on_fallback_predictions`` - warn when a segment is scored with a random guess
    - ``warn_on_clamped_similarity`` - warn when the mean similarity of the distillation
      loss falls below the clamp
    - ``warn_on_sparse_dump_lookup`` - warn when a dump replay answers with an earlier row
    - ``enable_debug_on_evaluation`` - log every segment/prediction association at DEBUG level
    """

    warn_on_rejected_rows = 0
    warn_on_fallback_predictions = 1
    warn_on_clamped_similarity = 2
    warn_on_sparse_dump_lookup = 3
    enable_debug_on_evaluation = 4


def enable_diag(diag_enum: Diagnostics) -> None:
    """
    Enable a global diagnostic flag (see :class:`Diagnostics`).
    """
    __diag__.enable(diag_enum.name)


def disable_diag(diag_enum: Diagnostics) -> None:
    """
    Disable a global diagnostic flag (see :class:`Diagnostics`).
    """
    __diag__.disable(diag_enum.name)


def enable_all_warnings() -> None:
    """
    Enable all global diagnostic warnings (see :class:`Diagnostics`).
    """
    __diag__.enable_all_warnings()


# hide abstract class
del __config_flags


def _should_enable_warnings(
    cmd_line_warn_options: typing.Iterable[str], warn_env_var: typing.Optional[str]
) -> bool:
    enable = bool(warn_env_var)
    for warn_opt in cmd_line_warn_options:
        w_action, w_message, w_category, w_module, w_line = (warn_opt + "::::").split(
            ":"
        )[:5]
        if not w_action.lower().startswith("i") and (
            not (w_message or w_category or w_module) or w_module == "streamant"
        ):
            enable = True
        elif w_action.lower().startswith("i") and w_module in ("streamant", ""):
            enable = False
    return enable


if _should_enable_warnings(
    sys.warnoptions, os.environ.get("STREAMANTENABLEALLWARNINGS")
):
    enable_all_warnings()


@dataclass(frozen=True)
class TimingConfig:
    """
    The timing triple that governs all scheduling: observation time
    ``observation`` (tau_o), anticipation time ``anticipation`` (tau_a) and
    model runtime ``runtime`` (tau_r), all in integer ticks, plus the tick
    resolution used to produce them.
    """

    observation: Tick
    anticipation: Tick
    runtime: Tick
    ticks_per_second: int = TICKS_PER_SECOND

    def __post_init__(self):
        for name in ("observation", "anticipation", "runtime", "ticks_per_second"):
            if not isinstance(getattr(self, name), (int, np.integer)):
                raise ContractError(f"{name} must be an integer tick count")
        if self.observation <= 0:
            raise ContractError("observation time must be > 0")
        if self.anticipation < 0:
            raise ContractError("anticipation time must be >= 0")
        if self.runtime <= 0:
            raise ContractError("runtime must be > 0")
        if self.ticks_per_second <= 0:
            raise ContractError("ticks_per_second must be > 0")

    @classmethod
    def from_seconds(
        cls,
        observation_s: Seconds,
        anticipation_s: Seconds,
        runtime_s: Optional[Seconds] = None,
        *,
        runtime_ms: Optional[Seconds] = None,
        ticks_per_second: int = TICKS_PER_SECOND,
    ) -> "TimingConfig":
        """
        Build a config from values in seconds (runtime may be given in
        milliseconds, as runtime tables report it).

        Example::

            TimingConfig.from_seconds("2.75", "1", runtime_ms="724.98")
            # -> TimingConfig(observation=2750000, anticipation=1000000, runtime=724980)
        """
        if (runtime_s is None) == (runtime_ms is None):
            raise ContractError("give exactly one of runtime_s, runtime_ms")
        runtime = (
            seconds_to_ticks(runtime_s, ticks_per_second)
            if runtime_s is not None
            else milliseconds_to_ticks(runtime_ms, ticks_per_second)
        )
        return cls(
            seconds_to_ticks(observation_s, ticks_per_second),
            seconds_to_ticks(anticipation_s, ticks_per_second),
            runtime,
            ticks_per_second,
        )

    def seconds(self, ticks: Tick) -> float:
        return ticks_to_seconds(ticks, self.ticks_per_second)

    def describe(self) -> str:
        return (
            f"tau_o={self.seconds(self.observation):g}s"
            f" tau_a={self.seconds(self.anticipation):g}s"
            f" tau_r={self.seconds(self.runtime) * 1000:g}ms"
            f" ({self.ticks_per_second} ticks/s)"
        )


@dataclass(frozen=True)
class ActionSegment:
    """A labeled interval ``[start, end)`` of one video."""

    video_id: str
    start: Tick
    end: Tick
    verb_id: int
    noun_id: int
    action_id: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ContractError(
                f"segment of {self.video_id} must satisfy start < end"
                f" (got {self.start} >= {self.end})"
            )

    @property
    def key(self) -> Tuple[str, Tick]:
        return self.video_id, self.start


class ScoreKind(Enum):
    PROBABILITY = "probability"
    LOGIT = "logit"


class ScoreVector:
    """
    Per-class scores over the action vocabulary.

    ``kind`` is :class:`ScoreKind.PROBABILITY` (entries >= 0, summing to 1) or
    :class:`ScoreKind.LOGIT` (any real values; ``-inf`` allowed, used for
    classes absent from a sparse prediction). The scores array is read-only.
    """

    __slots__ = ("scores", "kind")

    def __init__(self, scores, kind: ScoreKind = ScoreKind.PROBABILITY):
        arr = np.array(scores, dtype=np.float64)
        if arr.ndim != 1:
            raise ContractError("scores must be a one-dimensional vector")
        if np.isnan(arr).any():
            raise ContractError("scores must not contain NaN")
        kind = ScoreKind(kind)
        if kind is ScoreKind.PROBABILITY:
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise ContractError("probability scores must be finite and >= 0")
            if arr.size and abs(arr.sum() - 1.0) > PROBABILITY_TOLERANCE:
                raise ContractError(f"probability scores sum to {arr.sum()!r}, not 1")
        elif np.isposinf(arr).any():
            raise ContractError("logit scores must not contain +inf")
        arr.setflags(write=False)
        self.scores = arr
        self.kind = kind

    @classmethod
    def uniform(cls, size: int) -> "ScoreVector":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def one_hot(cls, size: int, index: int) -> "ScoreVector":
        arr = np.zeros(size)
        arr[index] = 1.0
        return cls(arr)

    @classmethod
    def from_logits(cls, logits) -> "ScoreVector":
        return cls(logits, ScoreKind.LOGIT)

    def __len__(self):
        return self.scores.size

    def __eq__(self, other):
        if not isinstance(other, ScoreVector):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self.scores, other.scores)

    def __repr__(self):
        return f"ScoreVector({self.scores.tolist()!r}, kind={self.kind.value!r})"

    @property
    def is_probability(self) -> bool:
        return self.kind is ScoreKind.PROBABILITY

    def as_probabilities(self) -> "ScoreVector":
        """softmax of a logit vector; probability vectors are returned unchanged"""
        if self.is_probability:
            return self
        shifted = self.scores - self.scores.max()
        expd = np.exp(shifted)
        return ScoreVector(expd / expd.sum())

    def topk(self, k: int) -> np.ndarray:
        """
        Indices of the ``k`` highest scores in descending order; ties are
        broken by lowest class index.
        """
        if not 0 < k <= len(self):
            raise ContractError(f"k must be in 1..{len(self)}, got {k}")
        return np.argsort(-self.scores, kind="stable")[:k]

    def rank_of(self, index: int) -> int:
        """0-based rank of class ``index`` under the same tie-breaking as :meth:`topk`"""
        s = self.scores
        target = s[index]
        return int(np.count_nonzero(s > target) + np.count_nonzero(s[:index] == target))


class Vocabulary:
    """
    Verb, noun and action vocabularies. Actions are the unique observed
    ``(verb_id, noun_id)`` pairs, densely indexed in sorted order.
    """

    def __init__(self, actions: Iterable[Tuple[int, int]]):
        self.actions: List[Tuple[int, int]] = sorted(set((int(v), int(n)) for v, n in actions))
        self.verbs: List[int] = sorted({v for v, _ in self.actions})
        self.nouns: List[int] = sorted({n for _, n in self.actions})
        self._action_index: Dict[Tuple[int, int], int] = {
            pair: i for i, pair in enumerate(self.actions)
        }
        self._verb_position = {v: i for i, v in enumerate(self.verbs)}
        self._noun_position = {n: i for i, n in enumerate(self.nouns)}
        self.action_verb_positions = np.array(
            [self._verb_position[v] for v, _ in self.actions], dtype=np.intp
        )
        self.action_noun_positions = np.array(
            [self._noun_position[n] for _, n in self.actions], dtype=np.intp
        )

    def __len__(self):
        return len(self.actions)

    @property
    def size(self) -> int:
        return len(self.actions)

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.actions == other.actions

    def __repr__(self):
        return f"Vocabulary({len(self.verbs)} verbs, {len(self.nouns)} nouns, {self.size} actions)"

    def action_index(self, verb_id: int, noun_id: int) -> int:
        try:
            return self._action_index[verb_id, noun_id]
        except KeyError:
            raise ContractError(f"({verb_id}, {noun_id}) is not in the vocabulary") from None

    def verb_position(self, verb_id: int) -> int:
        try:
            return self._verb_position[verb_id]
        except KeyError:
            raise ContractError(f"verb {verb_id} is not in the vocabulary") from None

    def noun_position(self, noun_id: int) -> int:
        try:
            return self._noun_position[noun_id]
        except KeyError:
            raise ContractError(f"noun {noun_id} is not in the vocabulary") from None

    def segment(
        self, video_id: str, start: Tick, end: Tick, verb_id: int, noun_id: int
    ) -> ActionSegment:
        return ActionSegment(
            video_id, start, end, verb_id, noun_id, self.action_index(verb_id, noun_id)
        )


def _row_field(row, name):
    if isinstance(row, typing.Mapping):
        return row.get(name)
    if isinstance(row, (tuple, list)) and not hasattr(row, name):
        return row[("verb_id", "noun_id").index(name)]
    return getattr(row, name, None)


def build_vocabulary(rows: Iterable) -> Vocabulary:
    """
    Build the vocabulary of all unique ``(verb, noun)`` pairs observed in
    ``rows``. A row can be a mapping or an object with ``verb_id`` and
    ``noun_id``, or a plain ``(verb_id, noun_id)`` pair.

    Example::

        build_vocabulary([(0, 0), (0, 1), (0, 0)]).actions  # -> [(0, 0), (0, 1)]
    """
    pairs = []
    for i, row in enumerate(rows):
        ids = []
        for name in ("verb_id", "noun_id"):
            value = _row_field(row, name)
            if value is None or value == "":
                raise DataFormatError(f"row {i} has no {name}")
            try:
                ivalue = int(value)
            except (TypeError, ValueError):
                raise DataFormatError(f"row {i} has non-integer {name} {value!r}") from None
            if ivalue < 0 or ivalue != value and not isinstance(value, str):
                raise DataFormatError(f"row {i} has invalid {name} {value!r}")
            ids.append(ivalue)
        pairs.append(tuple(ids))
    return Vocabulary(pairs)


def marginalize_scores(v: ScoreVector, voc: Vocabulary) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sum action probabilities over nouns (resp. verbs) to obtain verb (resp.
    noun) distributions, indexed by position in ``voc.verbs`` / ``voc.nouns``.

    Example::

        voc = Vocabulary([(0, 0), (1, 0)])
        marginalize_scores(ScoreVector([0.6, 0.4]), voc)  # -> ([0.6, 0.4], [1.0])
    """
    if not v.is_probability:
        raise ContractError("marginalization requires a probability vector; normalize first")
    if len(v) != voc.size:
        raise ContractError(f"score vector has {len(v)} entries, vocabulary has {voc.size}")
    verb_scores = np.bincount(
        voc.action_verb_positions, weights=v.scores, minlength=len(voc.verbs)
    )
    noun_scores = np.bincount(
        voc.action_noun_positions, weights=v.scores, minlength=len(voc.nouns)
    )
    return verb_scores, noun_scores


@dataclass(frozen=True)
class PredictionRecord:
    """
    One model output: the observed input window, the time the prediction
    became available, and its scores. Fallback records carry the random
    guess used for segments no prediction could reach in time; their window
    fields are left at the deadline. Timing-only simulations leave ``scores``
    as ``None``.
    """

    input_start: Tick
    input_end: Tick
    available_at: Tick
    scores: Optional[ScoreVector] = field(default=None, compare=False)
    is_fallback: bool = False

    def check(self, cfg: TimingConfig) -> None:
        if self.is_fallback:
            return
        if self.input_end - self.input_start != cfg.observation:
            raise ContractError("input window length differs from observation time")
        if self.available_at != self.input_end + cfg.runtime:
            raise ContractError("available_at differs from input_end + runtime")


def sort_segments(segments: Iterable[ActionSegment]) -> List[ActionSegment]:
    return sorted(segments, key=lambda s: (s.video_id, s.start, s.end, s.action_id))


def group_by_video(segments: Iterable[ActionSegment]) -> Dict[str, List[ActionSegment]]:
    """per-video lists of segments, each sorted by start"""
    ret: Dict[str, List[ActionSegment]] = {}
    for seg in sort_segments(segments):
        ret.setdefault(seg.video_id, []).append(seg)
    return ret


def label_positions(
    segments: Sequence[ActionSegment], voc: Vocabulary
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ground-truth (verb position, noun position, action index) arrays for ``segments``"""
    verbs = np.array([voc.verb_position(s.verb_id) for s in segments], dtype=np.intp)
    nouns = np.array([voc.noun_position(s.noun_id) for s in segments], dtype=np.intp)
    actions = np.array([s.action_id for s in segments], dtype=np.intp)
    return verbs, nouns, actions

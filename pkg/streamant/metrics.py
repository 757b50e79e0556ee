#
# metrics.py
#
"""
Top-k accuracy, mean top-k recall, reference baselines and the runtime
bookkeeping columns (FPS, buffer size).

Both measures rank classes by score with ties broken by lowest class index,
and are reported as percentages. Mean top-k recall averages per-class
recall over the classes present in the evaluated set.
"""
import logging
import typing
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    ActionSegment,
    PredictionRecord,
    ScoreVector,
    TimingConfig,
    Vocabulary,
    __diag__,
    group_by_video,
    label_positions,
    marginalize_scores,
)
from .exceptions import ContractError, CoverageError, UndefinedResultError
from .schedule import EvaluationMode, FallbackPolicy, UniformFallback, associate, offline_window
from .simulate import StubModel, SimulationTrace, simulate_videos
from .util import Seconds, floor_product

logger = logging.getLogger(__name__)

TASKS = ("verb", "noun", "action")
MEASURES = ("topk_accuracy", "mean_topk_recall")

Prediction = Tuple[ScoreVector, int]


def _hit(scores: np.ndarray, gt: int, k: int) -> bool:
    target = scores[gt]
    rank = np.count_nonzero(scores > target) + np.count_nonzero(scores[:gt] == target)
    return rank < k


def _hits_matrix(scores: np.ndarray, gts: np.ndarray, k: int) -> np.ndarray:
    # vectorized _hit over rows of an (N, C) matrix
    n, c = scores.shape
    target = scores[np.arange(n), gts][:, None]
    greater = np.count_nonzero(scores > target, axis=1)
    lower_ties = np.count_nonzero(
        (scores == target) & (np.arange(c)[None, :] < gts[:, None]), axis=1
    )
    return greater + lower_ties < k


@dataclass
class TopKTally:
    """
    Per-class hit and total counters for one task. Tallies over disjoint
    sets of examples can be combined with :meth:`merge` (or ``+``); the
    result is independent of merge order.
    """

    k: int
    hits: Counter = field(default_factory=Counter)
    totals: Counter = field(default_factory=Counter)

    def add(self, gt: int, hit: bool) -> None:
        self.totals[gt] += 1
        if hit:
            self.hits[gt] += 1

    @classmethod
    def from_hits(cls, k: int, gts: Sequence[int], hits: Sequence[bool]) -> "TopKTally":
        ret = cls(k)
        for gt, hit in zip(gts, hits):
            ret.add(int(gt), bool(hit))
        return ret

    def merge(self, other: "TopKTally") -> "TopKTally":
        if other.k != self.k:
            raise ContractError(f"cannot merge top-{self.k} and top-{other.k} tallies")
        return TopKTally(self.k, self.hits + other.hits, self.totals + other.totals)

    __add__ = merge

    @property
    def count(self) -> int:
        return sum(self.totals.values())

    @property
    def n_classes(self) -> int:
        return len(self.totals)

    def accuracy(self) -> float:
        if not self.count:
            raise UndefinedResultError("top-k accuracy of an empty prediction set")
        return 100.0 * sum(self.hits.values()) / self.count

    def mean_recall(self) -> float:
        if not self.count:
            raise UndefinedResultError("mean top-k recall of an empty prediction set")
        recalls = [self.hits[c] / n for c, n in self.totals.items()]
        return 100.0 * float(np.mean(recalls))


def _tally(preds: Sequence[Prediction], k: int) -> TopKTally:
    if not preds:
        raise UndefinedResultError("no predictions to score")
    ret = TopKTally(k)
    for scores, gt in preds:
        size = len(scores)
        if not 0 < k <= size:
            raise ContractError(f"k={k} must be in 1..{size}")
        if not 0 <= gt < size:
            raise ContractError(f"ground truth {gt} out of range for {size} classes")
        ret.add(gt, _hit(scores.scores, gt, k))
    return ret


def topk_accuracy(preds: Sequence[Prediction], k: int = 5) -> float:
    """
    Percentage of examples whose ground truth is among the ``k`` highest
    scores.

    Example::

        preds = [(ScoreVector.one_hot(10, 3), 3), ...]
        topk_accuracy(preds, k=5)
    """
    return _tally(preds, k).accuracy()


def mean_topk_recall(preds: Sequence[Prediction], k: int = 5) -> float:
    """
    Per-class top-``k`` recall, averaged uniformly over the classes that
    have at least one ground-truth example in ``preds``.
    """
    return _tally(preds, k).mean_recall()


def balanced_topk_accuracy(
    preds: Sequence[Prediction], k: int = 5, per_class: int = 1000, seed: int = 0
) -> float:
    """
    Top-k accuracy on a class-balanced resample: ``per_class`` examples are
    drawn with replacement from every present class.
    """
    if per_class <= 0:
        raise ContractError("per_class must be > 0")
    tally = _tally(preds, k)
    hits = np.array([_hit(s.scores, gt, k) for s, gt in preds])
    gts = np.array([gt for _, gt in preds])
    rng = np.random.default_rng(seed)
    total = 0
    for cls in sorted(tally.totals):
        idx = np.flatnonzero(gts == cls)
        total += int(hits[rng.choice(idx, per_class, replace=True)].sum())
    return 100.0 * total / (per_class * tally.n_classes)


def fps(runtime_ms: float) -> float:
    """frames (inferences) per second of a model with the given runtime"""
    if not runtime_ms > 0:
        raise ContractError(f"runtime must be > 0 ms, got {runtime_ms!r}")
    return 1000.0 / runtime_ms


def buffer_bytes(
    frame_rate: Seconds,
    observation_s: Seconds,
    height: int,
    width: int,
    channels: int = 3,
    bytes_per_sample: int = 1,
) -> int:
    """
    Memory needed to buffer one observation window:
    ``floor(frame_rate * observation_s) * height * width * channels * bytes``.

    Example::

        buffer_bytes(30, "1.07", 112, 112)  # -> 1204224 (32 frames)
    """
    if float(frame_rate) <= 0 or float(observation_s) < 0:
        raise ContractError("frame rate must be > 0 and observation time >= 0")
    if min(height, width, channels, bytes_per_sample) <= 0:
        raise ContractError("frame dimensions must be > 0")
    return floor_product(frame_rate, observation_s) * height * width * channels * bytes_per_sample


@dataclass
class EvaluationResult:
    """
    The six (task, measure) cells of one evaluation, as percentages, with
    the bookkeeping needed to audit it.
    """

    mode: str
    k: int
    tallies: Dict[str, TopKTally]
    n_segments: int
    fallback_count: int = 0
    config: Optional[TimingConfig] = None
    seed: Optional[int] = None
    mean_effective_anticipation_s: Optional[float] = None
    cells: Dict[Tuple[str, str], float] = field(init=False)

    def __post_init__(self):
        self.cells = {}
        for task in TASKS:
            tally = self.tallies[task]
            self.cells[task, "topk_accuracy"] = tally.accuracy()
            self.cells[task, "mean_topk_recall"] = tally.mean_recall()

    def __getitem__(self, key: Tuple[str, str]) -> float:
        return self.cells[key]

    def rows(self) -> List[Tuple[str, str, float]]:
        return [(task, measure, self.cells[task, measure]) for task in TASKS for measure in MEASURES]

    @property
    def class_counts(self) -> Dict[str, int]:
        return {task: self.tallies[task].n_classes for task in TASKS}


def _capped_k(k: int, size: int) -> int:
    if k <= 0:
        raise ContractError("k must be > 0")
    return min(k, size)


def _log_result(result: EvaluationResult) -> None:
    logger.info(
        "%s evaluation of %d segments: macro averages over %s classes, %d fallback predictions",
        result.mode,
        result.n_segments,
        "/".join(str(result.class_counts[t]) for t in TASKS),
        result.fallback_count,
    )


def baseline_scores(
    kind: str,
    train_segments: Sequence[ActionSegment],
    test_segments: Sequence[ActionSegment],
    voc: Vocabulary,
    k: int = 5,
    seed: int = 0,
) -> EvaluationResult:
    """
    Score a reference baseline on ``test_segments``, per task:

    - ``constant``: always the most frequent training classes
    - ``training``: a ranking sampled without replacement from the training
      class distribution
    - ``random``: a uniformly random ranking
    """
    if kind not in ("constant", "training", "random"):
        raise ContractError(f"unknown baseline {kind!r}")
    if kind != "random" and not train_segments:
        raise ContractError(f"{kind} baseline needs a nonempty training set")
    if not test_segments:
        raise UndefinedResultError("no test segments to score")
    rng = np.random.default_rng(seed)
    sizes = (len(voc.verbs), len(voc.nouns), voc.size)
    test_labels = label_positions(test_segments, voc)
    train_labels = label_positions(train_segments, voc) if train_segments else None
    tallies = {}
    for i, (task, size) in enumerate(zip(TASKS, sizes)):
        gts = test_labels[i]
        n = len(gts)
        if kind == "random":
            scores = rng.random((n, size))
        else:
            counts = np.bincount(train_labels[i], minlength=size).astype(np.float64)
            p = counts / counts.sum()
            if kind == "constant":
                scores = np.broadcast_to(p, (n, size))
            else:
                with np.errstate(divide="ignore"):
                    scores = np.log(p)[None, :] + rng.gumbel(size=(n, size))
        kk = _capped_k(k, size)
        tallies[task] = TopKTally.from_hits(kk, gts, _hits_matrix(scores, gts, kk))
    result = EvaluationResult(f"baseline-{kind}", k, tallies, len(test_segments), seed=seed)
    _log_result(result)
    return result


StreamingPredictions = Mapping[str, Union[SimulationTrace, Sequence[PredictionRecord]]]
OfflinePredictions = Mapping[Tuple[str, int], ScoreVector]


def _associations_offline(segs, predictions, cfg, missing):
    ret = []
    for seg in segs:
        scores = predictions.get(seg.key)
        if scores is None:
            missing.append(seg.key)
            continue
        start, end = offline_window(seg.start, cfg)
        ret.append((seg, PredictionRecord(start, end, end, scores)))
    return ret


def _associations_streaming(video_id, segs, predictions, cfg, fallback, missing):
    if video_id not in predictions:
        missing.extend(seg.key for seg in segs)
        return []
    records = predictions[video_id]
    if isinstance(records, SimulationTrace):
        records = records.records
    return associate(segs, records, cfg, fallback)


def evaluate(
    mode: Union[EvaluationMode, str],
    segments: Sequence[ActionSegment],
    predictions: Union[StreamingPredictions, OfflinePredictions],
    cfg: TimingConfig,
    voc: Vocabulary,
    fallback_seed: int = 0,
    k: int = 5,
    fallback: typing.Optional[FallbackPolicy] = None,
) -> EvaluationResult:
    """
    Score predictions on ``segments`` under either protocol.

    In offline mode ``predictions`` maps ``(video_id, start)`` to the
    :class:`ScoreVector` computed on the ideal window. In streaming mode it
    maps each video id to its trace (or sorted record list); segments are
    associated with the latest record available at ``start - tau_a`` and
    segments no record reaches are scored with a seeded random guess.

    Action scores are normalized (softmax for logits) and marginalized to
    verb and noun distributions before scoring. ``k`` is capped at each
    task's vocabulary size.

    Raises :class:`CoverageError` listing every segment that has no
    prediction.
    """
    mode = EvaluationMode(mode)
    if not segments:
        raise UndefinedResultError("no segments to evaluate")
    if fallback is None:
        fallback = UniformFallback(voc.size, fallback_seed)
    sizes = dict(zip(TASKS, (len(voc.verbs), len(voc.nouns), voc.size)))
    tallies = {task: TopKTally(_capped_k(k, size)) for task, size in sizes.items()}
    missing: List[Tuple[str, int]] = []
    fallback_count = 0
    leads = []
    for video_id, segs in group_by_video(segments).items():
        if mode is EvaluationMode.OFFLINE:
            pairs = _associations_offline(segs, predictions, cfg, missing)
        else:
            pairs = _associations_streaming(video_id, segs, predictions, cfg, fallback, missing)
        for seg, record in pairs:
            if record.scores is None:
                raise ContractError(f"prediction for {seg.key} carries no scores")
            if len(record.scores) != voc.size:
                raise ContractError(
                    f"prediction for {seg.key} has {len(record.scores)} scores,"
                    f" vocabulary has {voc.size}"
                )
            if record.is_fallback:
                fallback_count += 1
                if __diag__.warn_on_fallback_predictions:
                    warnings.warn(f"segment {seg.key} scored with a random guess", stacklevel=2)
            else:
                leads.append(seg.start - record.available_at)
            if __diag__.enable_debug_on_evaluation:
                logger.debug("segment %s -> %s", seg.key, record)
            probs = record.scores.as_probabilities()
            verb_scores, noun_scores = marginalize_scores(probs, voc)
            gts = {
                "verb": voc.verb_position(seg.verb_id),
                "noun": voc.noun_position(seg.noun_id),
                "action": seg.action_id,
            }
            for task, task_scores in zip(TASKS, (verb_scores, noun_scores, probs.scores)):
                tally = tallies[task]
                tally.add(gts[task], _hit(task_scores, gts[task], tally.k))
    if missing:
        raise CoverageError(
            f"{len(missing)} segment(s) have no prediction, first {missing[0]}", missing
        )
    result = EvaluationResult(
        mode.value,
        k,
        tallies,
        len(segments),
        fallback_count,
        cfg,
        fallback_seed,
        cfg.seconds(float(np.mean(leads))) if leads else None,
    )
    _log_result(result)
    return result


def evaluate_model(
    mode: Union[EvaluationMode, str],
    model: StubModel,
    segments: Sequence[ActionSegment],
    cfg: TimingConfig,
    voc: Vocabulary,
    *,
    fallback_seed: int = 0,
    k: int = 5,
    horizons: typing.Optional[Dict[str, int]] = None,
) -> EvaluationResult:
    """
    Query ``model`` the way the protocol would and score its predictions:
    once per segment on the ideal window offline, or by simulating a
    back-to-back stream over every video.
    """
    mode = EvaluationMode(mode)
    if mode is EvaluationMode.OFFLINE:
        predictions = {}
        for seg in segments:
            start, end = offline_window(seg.start, cfg)
            predictions[seg.key] = model.predict(seg.video_id, start, end)
    else:
        predictions = simulate_videos(model, segments, cfg, horizons)
    return evaluate(mode, segments, predictions, cfg, voc, fallback_seed, k)

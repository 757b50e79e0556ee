#
# harness.py
#
"""
File ingress and egress: annotation CSVs, runtime profiles, prediction
dumps (replayed as a stub model), simulation traces, and construction of
stub models from command-line specs.
"""
import bisect
import csv
import logging
import warnings
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    PROBABILITY_TOLERANCE,
    ActionSegment,
    PredictionRecord,
    ScoreVector,
    Tick,
    TimingConfig,
    Vocabulary,
    __diag__,
    build_vocabulary,
    sort_segments,
)
from .exceptions import ContractError, CoverageError, DataFormatError
from .formats import parse_dump_line, parse_stub_spec
from .simulate import (
    ConstantModel,
    DegradationCurve,
    NoisyOracleModel,
    OracleModel,
    SimulationTrace,
    StubModel,
    TrainingDistributionModel,
    UniformRandomModel,
)
from .util import (
    TICKS_PER_SECOND,
    format_seconds,
    microseconds_to_ticks,
    milliseconds_to_ticks,
    seconds_to_ticks,
    ticks_to_microseconds,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ANNOTATION_COLUMNS = ("video_id", "start_s", "stop_s", "verb_id", "noun_id")
PROFILE_COLUMNS = ("method", "runtime_ms", "observation_time_s", "anticipation_time_s")
TRACE_COLUMNS = ("input_start_us", "input_end_us", "available_at_us", "is_fallback")


@dataclass
class AnnotationReport:
    """rows accepted and rejected while loading an annotation file"""

    source: str
    accepted: int = 0
    rejected: List[Tuple[int, str]] = field(default_factory=list)

    def reject(self, lineno: int, reason: str) -> None:
        self.rejected.append((lineno, reason))
        if __diag__.warn_on_rejected_rows:
            warnings.warn(f"{self.source}, line {lineno}: rejected row ({reason})", stacklevel=3)

    def summary(self) -> str:
        return f"{self.source}: {self.accepted} rows accepted, {len(self.rejected)} rejected"


class AnnotationSet(NamedTuple):
    segments: List[ActionSegment]
    vocabulary: Vocabulary
    report: AnnotationReport


def _int_field(row, name, source, lineno, line):
    try:
        value = int(row[name])
    except (TypeError, ValueError):
        raise DataFormatError(
            f"{name} is not an integer: {row[name]!r}", source=source, lineno=lineno, line=line
        ) from None
    if value < 0:
        raise DataFormatError(f"{name} must be >= 0", source=source, lineno=lineno, line=line)
    return value


def _tick_field(row, name, tps, source, lineno, line):
    try:
        return seconds_to_ticks(row[name], tps)
    except (TypeError, ValueError, InvalidOperation):
        raise DataFormatError(
            f"{name} is not a number: {row[name]!r}", source=source, lineno=lineno, line=line
        ) from None


def load_annotations(
    path: PathLike,
    *,
    ticks_per_second: int = TICKS_PER_SECOND,
    vocabulary: Optional[Vocabulary] = None,
) -> AnnotationSet:
    """
    Read an annotation CSV with header
    ``video_id,start_s,stop_s,verb_id,noun_id[,action_id]``.

    Times are converted to ticks; rows with ``start >= stop`` are rejected
    and listed in the returned report, any other malformed row raises
    :class:`DataFormatError` with its line number. Without a ``vocabulary``
    one is built from the accepted rows; when given (to share it between a
    training and a test file), every row's (verb, noun) pair must be in it.
    An ``action_id`` column, if present, must map one-to-one onto
    (verb, noun) pairs.
    """
    source = str(path)
    report = AnnotationReport(source)
    rows = []
    with open(path, newline="", encoding="utf-8") as csvfile:
        reader = csv.DictReader(csvfile, skipinitialspace=True)
        header = reader.fieldnames or []
        missing = [c for c in ANNOTATION_COLUMNS if c not in header]
        if missing:
            raise DataFormatError(
                f"missing column(s) {', '.join(missing)}", source=source, lineno=1
            )
        has_action = "action_id" in header
        for row in reader:
            lineno = reader.line_num
            line = ",".join(str(row.get(c, "")) for c in header)
            if None in row.values() or None in row:
                raise DataFormatError("wrong number of fields", source=source, lineno=lineno, line=line)
            start = _tick_field(row, "start_s", ticks_per_second, source, lineno, line)
            stop = _tick_field(row, "stop_s", ticks_per_second, source, lineno, line)
            verb = _int_field(row, "verb_id", source, lineno, line)
            noun = _int_field(row, "noun_id", source, lineno, line)
            action = _int_field(row, "action_id", source, lineno, line) if has_action else None
            video_id = row["video_id"].strip()
            if not video_id:
                raise DataFormatError("empty video_id", source=source, lineno=lineno, line=line)
            if start >= stop:
                report.reject(lineno, f"start {row['start_s']} >= stop {row['stop_s']}")
                continue
            rows.append((lineno, line, video_id, start, stop, verb, noun, action))

    if has_action:
        by_pair: Dict[Tuple[int, int], int] = {}
        by_action: Dict[int, Tuple[int, int]] = {}
        for lineno, line, _, _, _, verb, noun, action in rows:
            if by_pair.setdefault((verb, noun), action) != action or by_action.setdefault(
                action, (verb, noun)
            ) != (verb, noun):
                raise DataFormatError(
                    f"action_id {action} inconsistent with ({verb}, {noun})",
                    source=source,
                    lineno=lineno,
                    line=line,
                )

    voc = vocabulary if vocabulary is not None else build_vocabulary([(r[5], r[6]) for r in rows])
    segments = []
    for lineno, line, video_id, start, stop, verb, noun, _ in rows:
        try:
            segments.append(voc.segment(video_id, start, stop, verb, noun))
        except ContractError as ce:
            raise DataFormatError(ce.msg, source=source, lineno=lineno, line=line) from None
    report.accepted = len(segments)
    logger.info(report.summary())
    return AnnotationSet(sort_segments(segments), voc, report)


def write_annotations(
    path: PathLike,
    segments: Iterable[ActionSegment],
    voc: Vocabulary,
    ticks_per_second: int = TICKS_PER_SECOND,
) -> None:
    """write segments in the annotation CSV format (with an ``action_id`` column)"""
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS + ("action_id",))
        for seg in sort_segments(segments):
            writer.writerow(
                [
                    seg.video_id,
                    format_seconds(seg.start, ticks_per_second),
                    format_seconds(seg.end, ticks_per_second),
                    seg.verb_id,
                    seg.noun_id,
                    voc.action_index(seg.verb_id, seg.noun_id),
                ]
            )


@dataclass(frozen=True)
class RuntimeProfile:
    """a method's measured runtime and the observation/anticipation times it is evaluated with"""

    method: str
    runtime_ms: Decimal
    observation_time_s: Decimal
    anticipation_time_s: Decimal

    def __post_init__(self):
        if not self.method:
            raise ContractError("profile needs a method name")
        if self.runtime_ms <= 0:
            raise ContractError(f"{self.method}: runtime_ms must be > 0")
        if self.observation_time_s <= 0:
            raise ContractError(f"{self.method}: observation_time_s must be > 0")
        if self.anticipation_time_s < 0:
            raise ContractError(f"{self.method}: anticipation_time_s must be >= 0")

    @property
    def fps(self) -> float:
        return 1000.0 / float(self.runtime_ms)

    def timing_config(self, ticks_per_second: int = TICKS_PER_SECOND) -> TimingConfig:
        """
        Example::

            RuntimeProfile("RULSTM", Decimal("724.98"), Decimal("2.75"), Decimal("1.0")).timing_config()
            # -> TimingConfig(observation=2750000, anticipation=1000000, runtime=724980)
        """
        return TimingConfig(
            seconds_to_ticks(self.observation_time_s, ticks_per_second),
            seconds_to_ticks(self.anticipation_time_s, ticks_per_second),
            milliseconds_to_ticks(self.runtime_ms, ticks_per_second),
            ticks_per_second,
        )


def load_profiles(path: PathLike) -> List[RuntimeProfile]:
    """
    Read runtime profiles, one per row:
    ``method,runtime_ms,observation_time_s,anticipation_time_s``. The header
    row is optional.
    """
    source = str(path)
    profiles = []
    with open(path, newline="", encoding="utf-8") as csvfile:
        reader = csv.reader(csvfile, skipinitialspace=True)
        for row in reader:
            lineno = reader.line_num
            if not row or row[0].startswith("#"):
                continue
            if tuple(c.strip() for c in row) == PROFILE_COLUMNS:
                continue
            line = ",".join(row)
            if len(row) != len(PROFILE_COLUMNS):
                raise DataFormatError(
                    f"expected {len(PROFILE_COLUMNS)} fields, got {len(row)}",
                    source=source,
                    lineno=lineno,
                    line=line,
                )
            try:
                values = [Decimal(v.strip()) for v in row[1:]]
                profiles.append(RuntimeProfile(row[0].strip(), *values))
            except InvalidOperation:
                raise DataFormatError(
                    "profile values must be numbers", source=source, lineno=lineno, line=line
                ) from None
            except ContractError as ce:
                raise DataFormatError(ce.msg, source=source, lineno=lineno, line=line) from None
    if not profiles:
        raise DataFormatError("no runtime profiles", source=source)
    return profiles


def load_profile(path: PathLike, method: Optional[str] = None) -> RuntimeProfile:
    """the profile named ``method``, or the first one in the file"""
    profiles = load_profiles(path)
    if method is None:
        return profiles[0]
    for profile in profiles:
        if profile.method == method:
            return profile
    raise DataFormatError(f"no profile for method {method!r}", source=str(path))


def scores_from_payload(kind: str, values, vocabulary_size: int) -> ScoreVector:
    """
    Build a score vector from a parsed dump payload.

    Dense payloads are probabilities when nonnegative and summing to 1,
    logits otherwise. Sparse payloads leave unlisted classes at ``-inf``;
    listed scores that look like probabilities (in ``[0, 1]``, some
    positive, summing to at most 1) are stored as their logarithms.
    """
    if kind == "dense":
        arr = np.array(values, dtype=np.float64)
        if arr.size != vocabulary_size:
            raise ContractError(f"dense row has {arr.size} scores, vocabulary has {vocabulary_size}")
        if np.isfinite(arr).all() and (arr >= 0).all() and abs(arr.sum() - 1.0) <= PROBABILITY_TOLERANCE:
            return ScoreVector(arr)
        return ScoreVector.from_logits(arr)
    idx = np.array([i for i, _ in values], dtype=np.intp)
    vals = np.array([v for _, v in values], dtype=np.float64)
    if (idx >= vocabulary_size).any():
        raise ContractError(f"class index out of range for {vocabulary_size} classes")
    if np.unique(idx).size != idx.size:
        raise ContractError("duplicate class index")
    if (vals >= 0).all() and (vals <= 1).all() and (vals > 0).any() and vals.sum() <= 1 + PROBABILITY_TOLERANCE:
        with np.errstate(divide="ignore"):
            vals = np.log(vals)
    logits = np.full(vocabulary_size, -np.inf)
    logits[idx] = vals
    if np.isneginf(logits).all():
        raise ContractError("sparse row has no finite score")
    return ScoreVector.from_logits(logits)


class DumpReplayModel(StubModel):
    """
    Replays an external model's dumped predictions. For a window ending at
    ``t`` it answers the row with ``input_end == t``; a sparse dump answers
    the latest row with ``input_end <= t``. Missing rows raise
    :class:`CoverageError`.
    """

    kind = "dump-replay"

    def __init__(
        self,
        rows: Dict[str, Tuple[List[Tick], List[ScoreVector]]],
        vocabulary_size: int,
        *,
        sparse: bool = False,
        source: str = "<dump>",
    ):
        super().__init__(vocabulary_size)
        self.rows = rows
        self.sparse = sparse
        self.source = source

    def row_for(self, video_id: str, t: Tick) -> Optional[int]:
        ends = self.rows.get(video_id, ((), ()))[0]
        pos = bisect.bisect_right(ends, t) - 1
        if pos < 0:
            return None
        if ends[pos] != t and not self.sparse:
            return None
        return pos

    def predict(self, video_id, window_start, window_end):
        pos = self.row_for(video_id, window_end)
        if pos is None:
            raise CoverageError(
                f"dump has no row for {video_id} at {window_end}",
                [(video_id, window_end)],
                source=self.source,
            )
        ends, scores = self.rows[video_id]
        if ends[pos] != window_end and __diag__.warn_on_sparse_dump_lookup:
            warnings.warn(
                f"{video_id}: window ending at {window_end} replayed from row at {ends[pos]}",
                stacklevel=2,
            )
        return scores[pos]


def load_dump(
    path: PathLike,
    vocabulary_size: int,
    *,
    sparse: bool = False,
    ticks_per_second: int = TICKS_PER_SECOND,
) -> DumpReplayModel:
    """
    Read a prediction dump, one row per line:
    ``video_id<TAB>input_end_us<TAB>class:score[,class:score...]`` or
    ``video_id<TAB>input_end_us<TAB>dense:s0,s1,...``. Blank lines and lines
    starting with ``#`` are skipped. Rows of each video must be strictly
    increasing in ``input_end`` once converted to ticks.
    """
    source = str(path)
    rows: Dict[str, Tuple[List[Tick], List[ScoreVector]]] = {}
    with open(path, encoding="utf-8") as dump:
        for lineno, line in enumerate(dump, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            row = parse_dump_line(text, source=source, lineno=lineno)
            try:
                scores = scores_from_payload(row.kind, row.values, vocabulary_size)
            except ContractError as ce:
                raise DataFormatError(ce.msg, source=source, lineno=lineno, line=text) from None
            input_end = microseconds_to_ticks(row.input_end, ticks_per_second)
            ends, vectors = rows.setdefault(row.video_id, ([], []))
            if ends and input_end <= ends[-1]:
                raise DataFormatError(
                    f"rows of {row.video_id} are not sorted by input_end",
                    source=source,
                    lineno=lineno,
                    line=text,
                )
            ends.append(input_end)
            vectors.append(scores)
    if not rows:
        raise DataFormatError("prediction dump is empty", source=source)
    logger.info("%s: %d rows for %d videos", source, sum(len(r[0]) for r in rows.values()), len(rows))
    return DumpReplayModel(rows, vocabulary_size, sparse=sparse, source=source)


def _format_score(value: float) -> str:
    return "-inf" if value == -np.inf else repr(float(value))


def write_dump(
    path: PathLike,
    rows: Iterable[Tuple[str, Tick, ScoreVector]],
    *,
    top: Optional[int] = None,
    ticks_per_second: int = TICKS_PER_SECOND,
) -> None:
    """
    Write ``(video_id, input_end, scores)`` rows; dense by default, or the
    ``top`` highest scores as a sparse row. ``input_end`` is in ticks and
    is written in microseconds.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for video_id, input_end, scores in rows:
            if top is None:
                payload = "dense:" + ",".join(_format_score(v) for v in scores.scores)
            else:
                payload = ",".join(
                    f"{int(i)}:{_format_score(scores.scores[i])}" for i in scores.topk(top)
                )
            out.write(f"{video_id}\t{ticks_to_microseconds(input_end, ticks_per_second)}\t{payload}\n")


def write_trace(
    path: PathLike,
    trace: Union[SimulationTrace, Sequence[PredictionRecord]],
    *,
    ticks_per_second: Optional[int] = None,
) -> None:
    """
    Write a trace with times in microseconds. The tick resolution defaults
    to the trace's own timing config, or to microsecond ticks for a bare
    record sequence.
    """
    if isinstance(trace, SimulationTrace):
        records = trace.records
        if ticks_per_second is None:
            ticks_per_second = trace.config.ticks_per_second
    else:
        records = trace
    tps = TICKS_PER_SECOND if ticks_per_second is None else ticks_per_second
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            times = (ticks_to_microseconds(t, tps) for t in (rec.input_start, rec.input_end, rec.available_at))
            writer.writerow([*times, int(rec.is_fallback)])


def read_trace(path: PathLike, *, ticks_per_second: int = TICKS_PER_SECOND) -> List[PredictionRecord]:
    """read a trace written by :func:`write_trace`, converting its microseconds to ticks"""
    source = str(path)
    records = []
    with open(path, newline="", encoding="utf-8") as csvfile:
        reader = csv.DictReader(csvfile)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise DataFormatError(f"trace header must be {','.join(TRACE_COLUMNS)}", source=source, lineno=1)
        for row in reader:
            try:
                values = [int(row[c]) for c in TRACE_COLUMNS]
            except (TypeError, ValueError):
                raise DataFormatError(
                    "trace fields must be integers", source=source, lineno=reader.line_num
                ) from None
            if values[3] not in (0, 1):
                raise DataFormatError("is_fallback must be 0 or 1", source=source, lineno=reader.line_num)
            start, end, available = (microseconds_to_ticks(v, ticks_per_second) for v in values[:3])
            records.append(PredictionRecord(start, end, available, None, bool(values[3])))
    return records


STUB_KINDS = ("oracle", "noisy-oracle", "constant", "training-distribution", "uniform-random")


def build_stub(
    spec: str,
    *,
    segments: Sequence[ActionSegment],
    vocabulary: Vocabulary,
    cfg: TimingConfig,
    train_segments: Optional[Sequence[ActionSegment]] = None,
    seed: int = 0,
    k: int = 5,
) -> StubModel:
    """
    Build a stub model from a spec such as ``oracle``,
    ``oracle(curve=0:1,1.5:0.2)``, ``oracle(accuracy=0.7)``,
    ``noisy-oracle(noise=0.2)``, ``constant``, ``training-distribution`` or
    ``uniform-random``. Frequency-based stubs use ``train_segments`` when
    given, else ``segments``.
    """
    kind, params = parse_stub_spec(spec)
    allowed = {
        "oracle": {"curve", "accuracy"},
        "noisy-oracle": {"noise"},
    }.get(kind, set())
    if kind not in STUB_KINDS:
        raise DataFormatError(f"unknown stub kind {kind!r}", source="stub spec")
    unknown = set(params) - allowed
    if unknown:
        raise DataFormatError(
            f"unknown parameter(s) for {kind}: {', '.join(sorted(unknown))}", source="stub spec"
        )
    size = vocabulary.size
    train = train_segments if train_segments is not None else segments
    try:
        if kind == "oracle":
            if "curve" in params and "accuracy" in params:
                raise DataFormatError("give either curve or accuracy", source="stub spec")
            if "curve" in params:
                curve = DegradationCurve.from_text(params["curve"], cfg.ticks_per_second)
            else:
                curve = DegradationCurve.constant(float(params.get("accuracy", 1.0)))
            return OracleModel(segments, size, curve, anticipation=cfg.anticipation, seed=seed, k=k)
        if kind == "noisy-oracle":
            return NoisyOracleModel(
                segments, size, float(params.get("noise", 0.0)),
                anticipation=cfg.anticipation, seed=seed, k=k,
            )
        if kind == "constant":
            return ConstantModel(train, size, seed)
        if kind == "training-distribution":
            return TrainingDistributionModel(train, size, seed)
        return UniformRandomModel(size, seed)
    except ValueError as ve:
        if isinstance(ve, ContractError):
            raise
        raise DataFormatError(f"bad stub parameter: {ve}", source="stub spec") from None

#
# report.py
#
"""
Report emission. Text reports print numbers at 2 decimals (rounded half up)
and carry a header with the timing configuration, seed, tool version and
fallback count; CSV outputs keep full precision. Nothing time- or
host-dependent is written, so re-running a command gives identical files.
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

from jinja2 import Template

from .harness import RuntimeProfile
from .metrics import MEASURES, TASKS, EvaluationResult
from .schedule import naive_effective_anticipation
from .util import TICKS_PER_SECOND, round_half_up

PathLike = Union[str, Path]

jinja2_result_source = """\
{{ tool }} -- {{ result.mode }} evaluation
{% if result.config %}
config: {{ result.config.describe() }}
{% endif %}
seed: {{ result.seed }}  k: {{ result.k }}  segments: {{ result.n_segments }}  fallback predictions: {{ result.fallback_count }}
{% if lead is not none %}
mean effective anticipation: {{ lead }}s
{% endif %}

{% for line in table %}
{{ line }}
{% endfor %}
"""

jinja2_comparison_source = """\
{{ tool }} -- runtime-aware comparison
seed: {{ seed }}  k: {{ k }}  ticks_per_second: {{ ticks_per_second }}

{% for line in table %}
{{ line }}
{% endfor %}
"""

jinja2_demo_source = """\
{{ tool }} -- toy distillation
feature loss: {{ loss }}
{% for line in table %}
{{ line }}
{% endfor %}
distilled >= plain on {{ wins }}/{{ n_seeds }} seeds, mean gain {{ gain }} points
"""


def _template(source: str) -> Template:
    return Template(source, trim_blocks=True, keep_trailing_newline=True)


result_template = _template(jinja2_result_source)
comparison_template = _template(jinja2_comparison_source)
demo_template = _template(jinja2_demo_source)


def fmt(value: float) -> str:
    return str(round_half_up(value, 2))


def _tool_version() -> str:
    from . import __version__

    return f"streamant {__version__}"


def _align(header: Sequence[str], rows: Sequence[Sequence], first_left: bool = True) -> List[str]:
    cells = [list(map(str, header))] + [list(map(str, row)) for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for r in cells:
        parts = [
            c.ljust(w) if (i == 0 and first_left) else c.rjust(w)
            for i, (c, w) in enumerate(zip(r, widths))
        ]
        lines.append("  ".join(parts).rstrip())
    return lines


def render_result(result: EvaluationResult) -> str:
    """aligned-text table of the six cells of one evaluation"""
    measures = [m.replace("topk", f"top{result.k}") for m in MEASURES]
    rows = [[task] + [fmt(result[task, m]) for m in MEASURES] for task in TASKS]
    lead = result.mean_effective_anticipation_s
    return result_template.render(
        tool=_tool_version(),
        result=result,
        lead=None if lead is None else str(round_half_up(lead, 3)),
        table=_align(["task"] + measures, rows),
    )


RESULT_CSV_COLUMNS = (
    "mode",
    "task",
    "measure",
    "value",
    "k",
    "seed",
    "n_segments",
    "fallback_count",
    "observation_ticks",
    "anticipation_ticks",
    "runtime_ticks",
    "ticks_per_second",
    "version",
)


def write_result_csv(
    path: PathLike, results: Sequence[EvaluationResult], methods: Optional[Sequence[str]] = None
) -> None:
    """one row per (result, task, measure), values at full precision"""
    version = _tool_version()
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow((("method",) if methods is not None else ()) + RESULT_CSV_COLUMNS)
        for i, result in enumerate(results):
            cfg = result.config
            timing = (
                [cfg.observation, cfg.anticipation, cfg.runtime, cfg.ticks_per_second]
                if cfg is not None
                else ["", "", "", ""]
            )
            prefix = [methods[i]] if methods is not None else []
            for task, measure, value in result.rows():
                writer.writerow(
                    prefix
                    + [result.mode, task, measure, repr(value), result.k, result.seed]
                    + [result.n_segments, result.fallback_count]
                    + timing
                    + [version]
                )


@dataclass
class ComparisonEntry:
    profile: RuntimeProfile
    offline: EvaluationResult
    streaming: EvaluationResult

    @property
    def offline_score(self) -> float:
        return self.offline["action", "mean_topk_recall"]

    @property
    def streaming_score(self) -> float:
        return self.streaming["action", "mean_topk_recall"]


def _ranked(entries: Sequence[ComparisonEntry], key) -> List[ComparisonEntry]:
    return sorted(entries, key=lambda e: (-key(e), e.profile.method))


def render_comparison(
    entries: Sequence[ComparisonEntry], *, seed: int, k: int, ticks_per_second: int = TICKS_PER_SECOND
) -> str:
    """
    Ranking by streaming action mean top-k recall, with the offline score
    and offline rank alongside. Each row reports its own observation time
    and how many predictions of either mode were fallbacks.
    """
    offline_rank = {
        e.profile.method: i for i, e in enumerate(_ranked(entries, lambda e: e.offline_score), 1)
    }
    rows = []
    for i, entry in enumerate(_ranked(entries, lambda e: e.streaming_score), 1):
        p = entry.profile
        rows.append(
            [
                i,
                p.method,
                p.runtime_ms,
                fmt(p.fps),
                p.observation_time_s,
                p.anticipation_time_s,
                fmt(entry.offline_score),
                offline_rank[p.method],
                fmt(entry.streaming_score),
                entry.offline.fallback_count,
                entry.streaming.fallback_count,
            ]
        )
    header = [
        "rank", "method", "rtime_ms", "fps", "tau_o", "tau_a",
        f"offline_mt{k}r", "offline_rank", f"streaming_mt{k}r",
        "offline_fallbacks", "streaming_fallbacks",
    ]
    table = _align(header, rows, first_left=False)
    return comparison_template.render(
        tool=_tool_version(), table=table, seed=seed, k=k, ticks_per_second=ticks_per_second
    )


PLOT_COLUMNS = ("method", "mode", "effective_anticipation_s", "action_mt5r")


def write_plot_data(path: PathLike, entries: Sequence[ComparisonEntry]) -> None:
    """
    Effective anticipation time against action mean top-k recall, one
    offline and one streaming point per method. Offline points sit at
    ``tau_a - tau_r`` (runtime ignored); streaming points at the measured
    mean lead time of the streamed predictions.
    """
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for entry in entries:
            cfg = entry.streaming.config
            offline_lead = cfg.seconds(naive_effective_anticipation(cfg))
            streaming_lead = entry.streaming.mean_effective_anticipation_s
            if streaming_lead is None:
                streaming_lead = cfg.seconds(cfg.anticipation)
            method = entry.profile.method
            writer.writerow([method, "offline", repr(offline_lead), repr(entry.offline_score)])
            writer.writerow([method, "streaming", repr(streaming_lead), repr(entry.streaming_score)])


def _demo_rows(demo):
    return zip(demo.seeds, demo.runs["plain"], demo.runs["distilled"])


def render_demo(demo) -> str:
    """accuracy table of a toy distillation run, in percent"""
    rows = [[seed, fmt(100.0 * p.accuracy), fmt(100.0 * d.accuracy)] for seed, p, d in _demo_rows(demo)]
    return demo_template.render(
        tool=_tool_version(),
        table=_align(["seed", "plain", "distilled"], rows, first_left=False),
        wins=demo.wins,
        n_seeds=len(demo.seeds),
        gain=fmt(demo.mean_improvement),
        loss=demo.loss,
    )


def write_demo_csv(path: PathLike, demo) -> None:
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(("seed", "plain_accuracy", "distilled_accuracy"))
        for seed, p, d in _demo_rows(demo):
            writer.writerow([seed, repr(p.accuracy), repr(d.accuracy)])


def write_loss_curves(path: PathLike, demo) -> None:
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(("mode", "seed", "epoch", "loss"))
        for mode, runs in demo.runs.items():
            for run in runs:
                for epoch, loss in enumerate(run.loss_curve):
                    writer.writerow([mode, run.seed, epoch, repr(loss)])

# module streamant.py
#
# Copyright (c) 2022  streamant contributors
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.
#

__doc__ = """
streamant - runtime-aware evaluation of action anticipation
===========================================================

Offline anticipation benchmarks score a model as if its prediction were
ready the instant the observed clip ends. ``streamant`` instead replays
the model on a stream: the model only sees frames that have arrived,
runs for its measured runtime, and each annotated action is scored with
the most recent prediction that was complete at least ``tau_a`` seconds
before the action starts.

Here is a short example, scoring an oracle stub offline and streaming::

    from streamant import *

    cfg = TimingConfig.from_seconds("2.75", "1", runtime_ms="724.98")
    ann = load_annotations("val.csv", ticks_per_second=cfg.ticks_per_second)
    model = OracleModel(ann.segments, ann.vocabulary.size, anticipation=cfg.anticipation)

    for mode in EvaluationMode:
        result = evaluate_model(mode, model, ann.segments, cfg, ann.vocabulary)
        print(render_result(result))

The package is organized as:

 - :mod:`streamant.core` - timing configuration, segments, score vectors,
   vocabulary and marginalization
 - :mod:`streamant.schedule` - offline windows and the closed-form
   streaming schedule, association of segments to predictions
 - :mod:`streamant.simulate` - discrete-event stream simulator and stub
   models
 - :mod:`streamant.metrics` - top-k accuracy, mean top-k recall and the
   offline/streaming evaluation drivers
 - :mod:`streamant.distill` - feature distillation losses, pair sampling
   and gradient checks
 - :mod:`streamant.toy` - the toy distillation experiment
 - :mod:`streamant.harness`, :mod:`streamant.formats`,
   :mod:`streamant.config`, :mod:`streamant.report` - file formats,
   configuration and reports
 - :mod:`streamant.cli` - the ``streamant`` command
"""
from typing import NamedTuple


class version_info(NamedTuple):
    major: int
    minor: int
    micro: int
    releaselevel: str
    serial: int

    @property
    def __version__(self):
        return (
            f"{self.major}.{self.minor}.{self.micro}"
            + (
                f"{'r' if self.releaselevel[0] == 'c' else ''}{self.releaselevel[0]}{self.serial}",
                "",
            )[self.releaselevel == "final"]
        )

    def __str__(self):
        return f"{__name__} {self.__version__} / {__version_time__}"

    def __repr__(self):
        return f"{__name__}.{type(self).__name__}({', '.join('{}={!r}'.format(*nv) for nv in zip(self._fields, self))})"


__version_info__ = version_info(0, 3, 0, "final", 0)
__version_time__ = "14 Oct 2022 16:40 UTC"
__version__ = __version_info__.__version__

from .util import *
from .exceptions import *
from .core import *
from .core import __diag__
from .schedule import *
from .simulate import *
from .metrics import *
from .distill import *
from .toy import *
from .formats import *
from .harness import *
from .config import *
from .report import *
from .testing import harness_test as testing

__all__ = [
    "__version__",
    "__version_time__",
    "__diag__",
    "version_info",
    "testing",
    # util
    "TICKS_PER_SECOND",
    "seconds_to_ticks",
    "milliseconds_to_ticks",
    "ticks_to_seconds",
    "ticks_to_microseconds",
    "microseconds_to_ticks",
    "round_half_up",
    # exceptions
    "HarnessBaseException",
    "UsageError",
    "DataFormatError",
    "CoverageError",
    "ContractError",
    "UndefinedResultError",
    "SetupError",
    "AcceptanceFailure",
    # core
    "Tick",
    "Diagnostics",
    "enable_diag",
    "disable_diag",
    "enable_all_warnings",
    "TimingConfig",
    "ActionSegment",
    "ScoreKind",
    "ScoreVector",
    "Vocabulary",
    "build_vocabulary",
    "marginalize_scores",
    "PredictionRecord",
    # schedule
    "FallbackPolicy",
    "EvaluationMode",
    "offline_window",
    "slot_times",
    "quantize_timestamp",
    "availability",
    "effective_anticipation",
    "UniformFallback",
    "associate",
    # simulate
    "DegradationCurve",
    "oracle_lookup",
    "StubModel",
    "OracleModel",
    "NoisyOracleModel",
    "ConstantModel",
    "TrainingDistributionModel",
    "UniformRandomModel",
    "SimulationTrace",
    "StreamSimulator",
    "run_stream",
    "verify_schedule",
    # metrics
    "TopKTally",
    "topk_accuracy",
    "mean_topk_recall",
    "balanced_topk_accuracy",
    "fps",
    "buffer_bytes",
    "EvaluationResult",
    "baseline_scores",
    "evaluate",
    "evaluate_model",
    # distill
    "FeatureMap",
    "similarity_matrix",
    "distill_loss",
    "mse_loss",
    "gap_mse_loss",
    "batch_mse_loss",
    "batch_gap_mse_loss",
    "FEATURE_LOSSES",
    "cross_entropy",
    "LossWeights",
    "combined_loss",
    "PairExample",
    "sample_pairs",
    "average_checkpoints",
    "save_checkpoint",
    "load_checkpoint",
    "gradient_check",
    "grad_check_suite",
    # toy
    "ToyTaskConfig",
    "make_toy_task",
    "ToyEncoder",
    "train_teacher",
    "train_toy",
    "run_demo",
    # formats, harness, config, report
    "parse_dump_line",
    "parse_degradation",
    "parse_stub_spec",
    "parse_config",
    "load_annotations",
    "write_annotations",
    "RuntimeProfile",
    "load_profiles",
    "load_profile",
    "load_dump",
    "write_dump",
    "write_trace",
    "read_trace",
    "build_stub",
    "HarnessConfig",
    "load_config",
    "render_result",
    "render_comparison",
    "write_result_csv",
    "write_plot_data",
]

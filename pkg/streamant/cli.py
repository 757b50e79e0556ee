#
# cli.py
#
"""
streamant command line.

Usage::

    streamant [--seed N] [--k K] [--ticks-per-second T] [--config FILE] [-v] COMMAND ...

Commands: eval-offline, eval-streaming, simulate, verify-schedule, compare,
distill-demo, grad-check. Global flags may also follow the command name.

Exit status: 0 success, 1 usage error, 2 data format error, 3 contract
violation, 4 acceptance-suite failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import HarnessConfig, load_config
from .core import ActionSegment, TimingConfig, Vocabulary
from .distill import FEATURE_LOSSES, assert_gradients, grad_check_suite, save_checkpoint
from .exceptions import AcceptanceFailure, DataFormatError, HarnessBaseException, UsageError
from .harness import build_stub, load_annotations, load_dump, load_profile, load_profiles, write_trace
from .metrics import evaluate_model
from .report import (
    ComparisonEntry,
    render_comparison,
    render_demo,
    render_result,
    write_demo_csv,
    write_loss_curves,
    write_plot_data,
    write_result_csv,
)
from .schedule import EvaluationMode
from .simulate import run_stream, verify_schedule
from .toy import run_demo
from .util import seconds_to_ticks

logger = logging.getLogger("streamant")


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; usage errors exit with 1 here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="random seed (default 0)")
    parser.add_argument("--k", type=int, default=default, help="top-k for both measures (default 5)")
    parser.add_argument(
        "--ticks-per-second", type=int, default=default, help="tick resolution (default 1000000)"
    )
    parser.add_argument("--config", default=default, help="sectioned key-value configuration file")
    parser.add_argument(
        "-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0,
        help="-v for progress, -vv for debug output",
    )


def _add_timing_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", help="runtime profile CSV")
    parser.add_argument("--method", help="method row of the profile file (default: first)")


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--dump", help="prediction dump to replay")
    group.add_argument("--stub", help="stub model spec, e.g. 'oracle(curve=0:1,2:0.2)'")
    parser.add_argument(
        "--sparse-dump", action="store_true", help="answer each window with the latest earlier dump row"
    )
    parser.add_argument("--train-annotations", help="training annotations (frequency stubs, shared vocabulary)")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="streamant", description="runtime-aware action anticipation evaluation")
    _add_global_options(parser, suppress=False)
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_ArgumentParser)
    commands.required = True

    for mode in ("offline", "streaming"):
        sub = commands.add_parser(f"eval-{mode}", help=f"score predictions under the {mode} protocol")
        _add_global_options(sub, suppress=True)
        sub.add_argument("--annotations", required=True, help="annotation CSV of the evaluated segments")
        _add_timing_options(sub)
        _add_model_options(sub)
        sub.add_argument("--csv", help="write results as CSV (full precision)")
        sub.add_argument("--report", help="write the text report here instead of stdout")

    sub = commands.add_parser("simulate", help="write the streaming trace of one video")
    _add_global_options(sub, suppress=True)
    _add_timing_options(sub)
    sub.add_argument("--horizon-s", help="simulate up to this time (seconds)")
    sub.add_argument("--annotations", help="annotations; the horizon defaults to the last deadline")
    sub.add_argument("--video", help="video to simulate (default: first in the annotations)")
    sub.add_argument("--stub", help="stub model producing scores (timing only when omitted)")
    sub.add_argument("-o", "--output", required=True, help="trace CSV to write")

    sub = commands.add_parser("verify-schedule", help="check the closed-form schedule against the simulator")
    _add_global_options(sub, suppress=True)
    sub.add_argument("--cases", type=int, default=10_000, help="random cases (default 10000)")
    sub.add_argument("--multiples", type=int, default=1_000, help="exact-multiple cases (default 1000)")

    sub = commands.add_parser("compare", help="rank methods offline and streaming")
    _add_global_options(sub, suppress=True)
    sub.add_argument("--annotations", required=True)
    sub.add_argument("--profiles", required=True, help="runtime profile CSV with one row per method")
    _add_model_options(sub)
    sub.add_argument("--plot-data", help="write effective anticipation vs score points (CSV)")
    sub.add_argument("--csv", help="write all results as CSV")
    sub.add_argument("--report", help="write the ranking table here instead of stdout")

    sub = commands.add_parser("distill-demo", help="toy distillation experiment, plain vs distilled")
    _add_global_options(sub, suppress=True)
    sub.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
    sub.add_argument("--table", help="write per-seed accuracies (CSV)")
    sub.add_argument("--curves", help="write per-epoch loss curves (CSV)")
    sub.add_argument(
        "--loss", choices=sorted(FEATURE_LOSSES), help="feature loss for the student (default: [toy] loss)"
    )
    sub.add_argument("--checkpoints", metavar="DIR", help="save every trained encoder here")
    sub.add_argument("--report", help="write the text table here instead of stdout")

    sub = commands.add_parser("grad-check", help="finite-difference check of every analytic gradient")
    _add_global_options(sub, suppress=True)
    sub.add_argument("--cases", type=int, default=100)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _harness_config(args) -> HarnessConfig:
    cfg = HarnessConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    try:
        cfg = cfg.override(seed=args.seed, k=args.k, ticks_per_second=args.ticks_per_second)
    except HarnessBaseException as err:
        raise UsageError(err.msg) from None
    cfg.apply_diagnostics()
    return cfg


def _timing(args, hc: HarnessConfig) -> TimingConfig:
    if getattr(args, "profile", None):
        return load_profile(args.profile, args.method).timing_config(hc.ticks_per_second)
    if hc.has_timing:
        return hc.timing_config()
    raise UsageError("no timing given: use --profile or a [timing] section in --config")


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_segments(args, hc: HarnessConfig):
    """evaluated segments, training segments and a vocabulary covering both"""
    tps = hc.ticks_per_second
    test = load_annotations(args.annotations, ticks_per_second=tps)
    train_path = getattr(args, "train_annotations", None)
    if not train_path:
        return test.segments, None, test.vocabulary
    train = load_annotations(train_path, ticks_per_second=tps)
    voc = Vocabulary(train.vocabulary.actions + test.vocabulary.actions)

    def reindex(segments: Sequence[ActionSegment]) -> List[ActionSegment]:
        return [voc.segment(s.video_id, s.start, s.end, s.verb_id, s.noun_id) for s in segments]

    return reindex(test.segments), reindex(train.segments), voc


def _model(args, hc, cfg, segments, train, voc):
    if args.dump:
        return load_dump(args.dump, voc.size, sparse=args.sparse_dump, ticks_per_second=hc.ticks_per_second)
    return build_stub(
        args.stub, segments=segments, vocabulary=voc, cfg=cfg, train_segments=train, seed=hc.seed, k=hc.k
    )


def cmd_eval(args, hc: HarnessConfig, mode: EvaluationMode) -> int:
    cfg = _timing(args, hc)
    segments, train, voc = _load_segments(args, hc)
    model = _model(args, hc, cfg, segments, train, voc)
    result = evaluate_model(mode, model, segments, cfg, voc, fallback_seed=hc.seed, k=hc.k)
    if args.csv:
        write_result_csv(args.csv, [result])
    _emit(render_result(result), args.report)
    return 0


def cmd_simulate(args, hc: HarnessConfig) -> int:
    cfg = _timing(args, hc)
    segments: List[ActionSegment] = []
    voc = None
    if args.annotations:
        loaded = load_annotations(args.annotations, ticks_per_second=hc.ticks_per_second)
        voc = loaded.vocabulary
        video = args.video or (loaded.segments[0].video_id if loaded.segments else None)
        segments = [s for s in loaded.segments if s.video_id == video]
        if args.video and not segments:
            raise UsageError(f"no segments for video {args.video!r}")
    if args.horizon_s is not None:
        horizon = seconds_to_ticks(args.horizon_s, hc.ticks_per_second)
    elif segments:
        horizon = max(0, segments[-1].start - cfg.anticipation)
    else:
        raise UsageError("simulate needs --horizon-s or --annotations")
    model = None
    if args.stub:
        if voc is None:
            raise UsageError("--stub needs --annotations")
        model = build_stub(args.stub, segments=segments, vocabulary=voc, cfg=cfg, seed=hc.seed, k=hc.k)
    trace = run_stream(model, segments, cfg, horizon, video_id=args.video)
    write_trace(args.output, trace)
    print(f"{len(trace)} records up to {horizon} written to {args.output}")
    return 0


def cmd_verify_schedule(args, hc: HarnessConfig) -> int:
    if args.cases < 0 or args.multiples < 0:
        raise UsageError("--cases and --multiples must be >= 0")
    result = verify_schedule(args.cases, hc.seed, args.multiples)
    print(result.summary())
    if not result.passed:
        s_i, cfg, closed, simulated = result.mismatches[0] if result.mismatches else (None,) * 4
        raise AcceptanceFailure(
            f"schedule mismatch: {len(result.mismatches)} case(s)"
            + (f", first s={s_i} {cfg}: closed form {closed}, simulator {simulated}" if cfg else "")
        )
    return 0


def cmd_compare(args, hc: HarnessConfig) -> int:
    segments, train, voc = _load_segments(args, hc)
    entries = []
    for profile in load_profiles(args.profiles):
        cfg = profile.timing_config(hc.ticks_per_second)
        model = _model(args, hc, cfg, segments, train, voc)
        offline = evaluate_model(EvaluationMode.OFFLINE, model, segments, cfg, voc, fallback_seed=hc.seed, k=hc.k)
        streaming = evaluate_model(
            EvaluationMode.STREAMING, model, segments, cfg, voc, fallback_seed=hc.seed, k=hc.k
        )
        entries.append(ComparisonEntry(profile, offline, streaming))
    if args.plot_data:
        write_plot_data(args.plot_data, entries)
    if args.csv:
        results, methods = [], []
        for e in entries:
            results += [e.offline, e.streaming]
            methods += [e.profile.method] * 2
        write_result_csv(args.csv, results, methods)
    _emit(
        render_comparison(entries, seed=hc.seed, k=hc.k, ticks_per_second=hc.ticks_per_second), args.report
    )
    return 0


def cmd_distill_demo(args, hc: HarnessConfig) -> int:
    if args.seeds <= 0:
        raise UsageError("--seeds must be > 0")
    if args.checkpoints:
        Path(args.checkpoints).mkdir(parents=True, exist_ok=True)
    demo = run_demo(range(hc.seed, hc.seed + args.seeds), hc.toy, loss=args.loss)
    if args.checkpoints:
        for runs in demo.runs.values():
            for run in runs:
                save_checkpoint(Path(args.checkpoints) / run.checkpoint_name, run.encoder.params)
    if args.table:
        write_demo_csv(args.table, demo)
    if args.curves:
        write_loss_curves(args.curves, demo)
    _emit(render_demo(demo), args.report)
    return 0


def cmd_grad_check(args, hc: HarnessConfig) -> int:
    if args.cases <= 0:
        raise UsageError("--cases must be > 0")
    worst = grad_check_suite(args.cases, hc.seed)
    for name, err in worst.items():
        print(f"{name:14s} max relative error {err:.3e}")
    assert_gradients(worst)
    print("all gradients match")
    return 0


COMMANDS = {
    "eval-offline": lambda a, h: cmd_eval(a, h, EvaluationMode.OFFLINE),
    "eval-streaming": lambda a, h: cmd_eval(a, h, EvaluationMode.STREAMING),
    "simulate": cmd_simulate,
    "verify-schedule": cmd_verify_schedule,
    "compare": cmd_compare,
    "distill-demo": cmd_distill_demo,
    "grad-check": cmd_grad_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        hc = _harness_config(args)
        logger.debug("%s: %s", args.command, hc)
        return COMMANDS[args.command](args, hc)
    except HarnessBaseException as err:
        print(err.explain(), file=sys.stderr)
        return err.exit_code
    except OSError as err:
        # unreadable inputs and unwritable outputs are data format problems
        dfe = DataFormatError(
            err.strerror or str(err), source=None if err.filename is None else str(err.filename)
        )
        print(dfe.explain(), file=sys.stderr)
        return dfe.exit_code

#
# formats.py
#
"""
pyparsing grammars for the line-oriented text formats the harness reads:

- prediction dump rows::

      P01_01<TAB>2750000<TAB>12:0.61,7:0.2,3:0.1
      P01_01<TAB>3475000<TAB>dense:0.1,0.4,0.5

- degradation curves ``offset_s:accuracy[,offset_s:accuracy...]``
- stub model specs ``kind`` or ``kind(key=value[;key=value...])``
- the sectioned key-value configuration file

Parse failures are reported as :class:`DataFormatError` with the line
number of the offending input.
"""
import typing
from decimal import Decimal
from typing import Dict, List, NamedTuple, Optional, Tuple

import pyparsing as pp

from .exceptions import DataFormatError

ppc = pp.pyparsing_common

COMMA = pp.Suppress(",")
COLON = pp.Suppress(":")

score_number = (
    pp.Regex(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|-inf")
    .set_name("score")
    .set_parse_action(lambda t: float(t[0]))
)
"""real number with optional exponent, or ``-inf``; returns a float"""

decimal_seconds = (
    pp.Regex(r"\d+(?:\.\d*)?|\.\d+").set_name("seconds").set_parse_action(lambda t: Decimal(t[0]))
)
"""nonnegative decimal number of seconds, kept exact as a ``Decimal``"""

video_id = pp.Word(pp.printables).set_name("video id")

sparse_entry = pp.Group(ppc.integer("index") + COLON + score_number("score")).set_name(
    "class:score"
)
sparse_payload = pp.Group(sparse_entry + pp.ZeroOrMore(COMMA + sparse_entry))("sparse")
dense_payload = pp.Suppress(pp.CaselessLiteral("dense:")) + pp.Group(
    score_number + pp.ZeroOrMore(COMMA + score_number)
)("dense")

dump_line = (
    video_id("video_id")
    + ppc.signed_integer("input_end")
    + (dense_payload | sparse_payload)
    + pp.StringEnd()
).set_name("dump row")

degradation_point = pp.Group(decimal_seconds("offset") + COLON + score_number("accuracy"))
degradation_spec = (
    degradation_point + pp.ZeroOrMore(COMMA + degradation_point) + pp.StringEnd()
).set_name("degradation curve")

stub_kind = pp.Regex(r"[a-z][a-z0-9-]*").set_name("stub kind")
stub_param = pp.Group(
    pp.Word(pp.alphas + "_", pp.alphanums + "_")("key")
    + pp.Suppress("=")
    + pp.Regex(r"[^;)]+")("value").set_parse_action(lambda t: t[0].strip())
)
stub_spec = (
    stub_kind("kind")
    + pp.Opt(
        pp.Suppress("(")
        + pp.Group(pp.Opt(stub_param + pp.ZeroOrMore(pp.Suppress(";") + stub_param)))("params")
        + pp.Suppress(")")
    )
    + pp.StringEnd()
).set_name("stub spec")

config_comment = pp.Regex(r"[#;].*").set_name("comment")
config_key = pp.Word(pp.alphas + "_", pp.alphanums + "_-.").set_name("key")
config_value = (
    pp.Regex(r"[^#;\n]+")
    .leave_whitespace()
    .set_parse_action(lambda t: t[0].strip())
    .set_name("value")
)
config_entry = pp.Group(config_key("key") + pp.Suppress("=") + config_value("value"))
config_section = pp.Group(
    pp.Suppress("[")
    + pp.Word(pp.alphanums + "_-")("name")
    + pp.Suppress("]")
    + pp.Group(pp.ZeroOrMore(config_entry))("entries")
)
config_file = (pp.ZeroOrMore(config_section) + pp.StringEnd()).ignore(config_comment)


class DumpRowPayload(NamedTuple):
    video_id: str
    input_end: int
    kind: str
    values: typing.Union[List[float], List[Tuple[int, float]]]


def _raise(pe: pp.ParseBaseException, source, lineno):
    raise DataFormatError._from_parse_exception(pe, source, lineno) from None


def parse_dump_line(
    line: str, *, source: Optional[str] = None, lineno: Optional[int] = None
) -> DumpRowPayload:
    """
    Parse one dump row. Sparse payloads give ``(class, score)`` pairs,
    dense payloads one score per class.

    Example::

        parse_dump_line("v1\\t100\\t3:0.7,1:0.3")
        # -> DumpRowPayload(video_id='v1', input_end=100, kind='sparse', values=[(3, 0.7), (1, 0.3)])
    """
    try:
        result = dump_line.parse_string(line, parse_all=True)
    except pp.ParseBaseException as pe:
        _raise(pe, source, lineno)
    if "dense" in result:
        return DumpRowPayload(result.video_id, result.input_end, "dense", list(result.dense))
    return DumpRowPayload(
        result.video_id,
        result.input_end,
        "sparse",
        [(entry.index, entry.score) for entry in result.sparse],
    )


def parse_degradation(text: str) -> List[Tuple[Decimal, float]]:
    """``"0:0.9,1.5:0.2"`` -> ``[(Decimal('0'), 0.9), (Decimal('1.5'), 0.2)]``"""
    try:
        result = degradation_spec.parse_string(text.strip(), parse_all=True)
    except pp.ParseBaseException as pe:
        _raise(pe, "degradation curve", None)
    return [(point.offset, point.accuracy) for point in result]


def parse_stub_spec(text: str) -> Tuple[str, Dict[str, str]]:
    """
    ``"noisy-oracle(noise=0.2)"`` -> ``("noisy-oracle", {"noise": "0.2"})``
    """
    try:
        result = stub_spec.parse_string(text.strip(), parse_all=True)
    except pp.ParseBaseException as pe:
        _raise(pe, "stub spec", None)
    params = {}
    for param in result.get("params", []):
        if param.key in params:
            raise DataFormatError(f"duplicate stub parameter {param.key!r}", source="stub spec")
        params[param.key] = param.value
    return result.kind, params


def parse_config(text: str, source: Optional[str] = None) -> Dict[str, Dict[str, str]]:
    """
    Parse a sectioned key-value file into ``{section: {key: value}}``. Lines
    starting with ``#`` or ``;`` are comments; values run to the end of the
    line (or to a trailing comment) and are stripped.

    Example::

        [timing]
        observation_s = 2.75
        runtime_ms = 724.98

        [eval]
        seed = 7
    """
    try:
        result = config_file.parse_string(text, parse_all=True)
    except pp.ParseBaseException as pe:
        _raise(pe, source, None)
    ret: Dict[str, Dict[str, str]] = {}
    for section in result:
        if section.name in ret:
            raise DataFormatError(f"duplicate section [{section.name}]", source=source)
        entries = ret[section.name] = {}
        for entry in section.entries:
            if entry.key in entries:
                raise DataFormatError(
                    f"duplicate key {entry.key!r} in [{section.name}]",
                    source=source,
                )
            entries[entry.key] = entry.value
    return ret

#
# config.py
#
import logging
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .core import TimingConfig, __diag__
from .exceptions import ContractError, DataFormatError
from .formats import parse_config
from .toy import ToyTaskConfig
from .util import TICKS_PER_SECOND

logger = logging.getLogger(__name__)

_ON = ("1", "on", "true", "yes")
_OFF = ("0", "off", "false", "no")


@dataclass(frozen=True)
class HarnessConfig:
    """
    Settings shared by every command. Values come from defaults, then a
    configuration file (see :func:`load_config`), then command-line flags;
    each layer overrides the previous one.

    ``observation_s``, ``anticipation_s`` and ``runtime_ms`` are kept as
    decimal strings until converted to ticks, so that no float rounding
    enters the tick values.
    """

    observation_s: Optional[str] = None
    anticipation_s: Optional[str] = None
    runtime_ms: Optional[str] = None
    seed: int = 0
    k: int = 5
    ticks_per_second: int = TICKS_PER_SECOND
    fallback: str = "uniform"
    toy: ToyTaskConfig = field(default_factory=ToyTaskConfig)
    diag: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.k <= 0:
            raise ContractError("k must be > 0")
        if self.ticks_per_second <= 0:
            raise ContractError("ticks_per_second must be > 0")
        if self.fallback != "uniform":
            raise ContractError(f"unknown fallback policy {self.fallback!r}")
        for name in ("observation_s", "anticipation_s", "runtime_ms"):
            value = getattr(self, name)
            if value is not None:
                try:
                    Decimal(value)
                except InvalidOperation:
                    raise ContractError(f"{name} is not a number: {value!r}") from None

    @property
    def has_timing(self) -> bool:
        return None not in (self.observation_s, self.anticipation_s, self.runtime_ms)

    def timing_config(self) -> TimingConfig:
        if not self.has_timing:
            raise ContractError("observation_s, anticipation_s and runtime_ms are all required")
        return TimingConfig.from_seconds(
            self.observation_s,
            self.anticipation_s,
            runtime_ms=self.runtime_ms,
            ticks_per_second=self.ticks_per_second,
        )

    def override(self, **values: Any) -> "HarnessConfig":
        """copy with every non-``None`` value replaced"""
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    def apply_diagnostics(self) -> None:
        for name, enabled in self.diag.items():
            (__diag__.enable if enabled else __diag__.disable)(name)


_SECTION_KEYS = {
    "timing": {"observation_s", "anticipation_s", "runtime_ms"},
    "eval": {"seed", "k", "ticks_per_second", "fallback"},
}
_INT_KEYS = {"seed", "k", "ticks_per_second"}


def _flag(value: str, where: str) -> bool:
    lowered = value.lower()
    if lowered in _ON:
        return True
    if lowered in _OFF:
        return False
    raise DataFormatError(f"{where}: expected on/off, got {value!r}")


def config_from_sections(
    sections: Dict[str, Dict[str, str]], base: HarnessConfig = HarnessConfig(), source: str = "<config>"
) -> HarnessConfig:
    values: Dict[str, Any] = {}
    for section, entries in sections.items():
        if section == "toy":
            try:
                values["toy"] = ToyTaskConfig.from_mapping(entries)
            except (ValueError, TypeError) as err:
                raise DataFormatError(f"[toy]: {err}", source=source) from None
            continue
        if section == "diag":
            diag = dict(base.diag)
            for name, raw in entries.items():
                if name not in __diag__._all_names:
                    raise DataFormatError(f"[diag]: no such diagnostic {name!r}", source=source)
                diag[name] = _flag(raw, f"[diag] {name}")
            values["diag"] = diag
            continue
        if section not in _SECTION_KEYS:
            raise DataFormatError(f"unknown section [{section}]", source=source)
        for key, raw in entries.items():
            if key not in _SECTION_KEYS[section]:
                raise DataFormatError(f"unknown key {key!r} in [{section}]", source=source)
            if key in _INT_KEYS:
                try:
                    values[key] = int(raw)
                except ValueError:
                    raise DataFormatError(f"[{section}] {key} must be an integer", source=source) from None
            else:
                values[key] = raw
    try:
        return base.override(**values)
    except ContractError as ce:
        raise DataFormatError(ce.msg, source=source) from None


def load_config(path: Union[str, Path], base: HarnessConfig = HarnessConfig()) -> HarnessConfig:
    """
    Read a configuration file::

        [timing]
        observation_s = 2.75
        anticipation_s = 1
        runtime_ms = 724.98

        [eval]
        seed = 7
        k = 5

        [toy]
        epochs = 40

        [diag]
        warn_on_rejected_rows = on
    """
    source = str(path)
    text = Path(path).read_text(encoding="utf-8")
    cfg = config_from_sections(parse_config(text, source), base, source)
    logger.debug("loaded configuration from %s", source)
    return cfg

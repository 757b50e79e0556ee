# exceptions.py
import typing


class HarnessBaseException(Exception):
    """base exception class for all harness errors"""

    exit_code = 1

    def __init__(
        self,
        msg: str,
        *,
        source: typing.Optional[str] = None,
        lineno: typing.Optional[int] = None,
        line: typing.Optional[str] = None,
    ):
        self.msg = msg
        self.source = source
        self.lineno = lineno
        self.line = line
        self.args = (msg,)

    @classmethod
    def _from_parse_exception(cls, pe, source=None, lineno=None):
        """
        internal factory to convert a pyparsing ParseException raised while
        reading one line of an input file into a harness error
        """
        return cls(
            f"{pe.msg} (col:{pe.column})",
            source=source,
            lineno=lineno if lineno is not None else pe.lineno,
            line=pe.line,
        )

    def __str__(self) -> str:
        where = []
        if self.source is not None:
            where.append(str(self.source))
        if self.lineno is not None:
            where.append(f"line:{self.lineno}")
        if where:
            return f"{self.msg}  (at {', '.join(where)})"
        return self.msg

    def __repr__(self):
        return f"{type(self).__name__}({str(self)!r})"

    def explain(self) -> str:
        """
        Return the error message, followed by the offending input line (when
        known) marked with ``>!<``.

        Example::

            try:
                load_annotations("bad.csv")
            except DataFormatError as err:
                print(err.explain())

        prints::

            DataFormatError: stop_s is not a number  (at bad.csv, line:3)
            >!<P01_01,1.5,x,2,4
        """
        ret = [f"{type(self).__name__}: {self}"]
        if self.line is not None:
            ret.append(">!<" + self.line.strip())
        return "\n".join(ret)


class UsageError(HarnessBaseException):
    """
    Raised for unknown commands, unknown or malformed flags, and missing
    required arguments.
    """

    exit_code = 1


class DataFormatError(HarnessBaseException):
    """
    Raised when an input file (annotations, runtime profile, prediction dump,
    trace, configuration, checkpoint) does not follow its documented format.
    """

    exit_code = 2


class CoverageError(DataFormatError):
    """
    Raised when predictions do not cover every evaluated segment; ``missing``
    lists the uncovered segment ids as ``(video_id, start_tick)`` pairs.
    """

    def __init__(self, msg: str, missing: typing.Sequence = (), **kwargs):
        super().__init__(msg, **kwargs)
        self.missing = list(missing)


class ContractError(HarnessBaseException, ValueError):
    """
    Raised when a caller violates an operation's precondition - mismatched
    tensor shapes, unsorted inputs, a logit vector passed where probabilities
    are required, and so on.
    """

    exit_code = 3


class UndefinedResultError(ContractError):
    """Raised when a measure is requested over an empty set of predictions"""


class SetupError(ContractError):
    """Raised when an experiment cannot start, e.g. a teacher below its accuracy floor"""


class AcceptanceFailure(HarnessBaseException):
    """Raised by the acceptance suites (``verify-schedule``, ``grad-check``) on failure"""

    exit_code = 4

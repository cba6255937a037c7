"""Exception hierarchy and the ``Violation`` record shared by the checkers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


class TrpError(Exception):
    """Base class for every error raised by trpkit."""


# -- grammar -----------------------------------------------------------------

class ParseError(TrpError, ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at offset {position})")
        self.position = position


class UnbalancedPhrase(ParseError):
    pass


class MalformedDecodeSpec(ParseError):
    pass


class BadRefIndex(ParseError):
    pass


class DanglingRef(ParseError):
    pass


class EmptyPhrase(ParseError):
    pass


class InvariantViolation(TrpError, ValueError):
    pass


# -- vd-cot ------------------------------------------------------------------

class CotParseError(TrpError, ValueError):
    pass


class MissingTaskTags(CotParseError):
    pass


class MultipleTaskBlocks(CotParseError):
    pass


class MalformedDecodeLine(CotParseError):
    pass


class MalformedEntryLine(CotParseError):
    pass


# -- numerics ----------------------------------------------------------------

class DimensionMismatch(TrpError, ValueError):
    pass


class ShapeMismatch(TrpError, ValueError):
    pass


class NonContiguousGroup(TrpError, ValueError):
    pass


class PadTooSmall(TrpError, ValueError):
    pass


class BadRunLength(TrpError, ValueError):
    pass


class MixedUnits(TrpError, ValueError):
    pass


class InfeasibleAssignment(TrpError, ValueError):
    def __init__(self, message: str, group: int | None = None):
        super().__init__(message if group is None else f"group {group}: {message}")
        self.group = group


class TooLarge(TrpError, ValueError):
    pass


class EmptyPrompt(TrpError, ValueError):
    pass


class LengthMismatch(TrpError, ValueError):
    pass


class EmptyDataset(TrpError, ValueError):
    pass


class ZeroNormEmbedding(TrpError, ValueError):
    pass


# -- corpus ------------------------------------------------------------------

class MissingGeometry(TrpError, ValueError):
    pass


class EmptyTemplateBank(TrpError, ValueError):
    pass


class UnreadableFile(TrpError, OSError):
    pass


class SchemaError(TrpError, ValueError):
    pass


@dataclass
class Violation:
    """A rule failure reported (not raised) by a checker.

    ``kind`` is a stable machine-readable tag such as ``"BadRefIndex"`` or
    ``"RefCountMismatch"``; ``data`` carries kind-specific details.
    """

    kind: str
    message: str
    data: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "message": self.message}
        if self.data:
            out["data"] = self.data
        return out

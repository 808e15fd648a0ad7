"""
Diagnostics and Error Types for Text-Mask Parsing.

Every text format in this package can be parsed in two modes:

    - strict: the first rule violation raises ``GrammarError``
    - lenient: violations are repaired and recorded as ``Diagnostic`` entries

Both modes funnel through ``DiagnosticSink``, so a rule is written once and
behaves correctly in either mode.

Error hierarchy:
    - MaskFormatError (construct.ConstructError)
        - GrammarError: a parse rule was violated (carries rule + byte offset)
        - EncodingError: a label id has no text in the label table
    - LabelError (ValueError): an invalid label table or referent
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from construct import ConstructError


# ============================================================================
# Exceptions
# ============================================================================

class MaskFormatError(ConstructError):
    """Base class for text-mask format violations."""

    def __init__(self, message: str, rule: str = "format", offset: Optional[int] = None):
        self.rule = rule
        self.offset = offset
        self.message = message
        if offset is None:
            super().__init__(f"[{rule}] {message}")
        else:
            super().__init__(f"[{rule}] at byte {offset}: {message}")


class GrammarError(MaskFormatError):
    """Strict-mode parse failure."""

    def shifted(self, delta: int) -> "GrammarError":
        """Return a copy whose offset is rebased by ``delta`` bytes."""
        offset = None if self.offset is None else self.offset + delta
        return GrammarError(self.message, rule=self.rule, offset=offset)


class EncodingError(MaskFormatError):
    """Raised when a grid holds an id that the label table cannot name."""


class LabelError(ValueError):
    """Raised for invalid label tables, labels, or referents."""


# ============================================================================
# Diagnostics
# ============================================================================

class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


class ParseMode(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class Diagnostic:
    """A single parse diagnostic (error, warning, or info)."""
    severity: Severity
    rule: str
    offset: Optional[int]
    message: str

    def shifted(self, delta: int) -> "Diagnostic":
        if self.offset is None:
            return self
        return Diagnostic(self.severity, self.rule, self.offset + delta, self.message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "severity": self.severity.value,
            "rule": self.rule,
            "offset": self.offset,
            "message": self.message,
        }

    def __str__(self) -> str:
        where = "" if self.offset is None else f" @{self.offset}"
        return f"{self.severity.value}: [{self.rule}]{where} {self.message}"


def byte_offset_table(text: str) -> np.ndarray:
    """UTF-8 byte offset of every character index ``0 .. len(text)``."""
    widths = np.fromiter((len(c.encode("utf-8", "surrogatepass")) for c in text),
                         dtype=np.int64, count=len(text))
    table = np.zeros(len(text) + 1, dtype=np.int64)
    np.cumsum(widths, out=table[1:])
    return table


class DiagnosticSink:
    """
    Collects diagnostics for one parse, or raises on the first one.

    In strict mode ``report`` raises ``GrammarError`` for any rule violation.
    In lenient mode it appends a ``Diagnostic`` and returns, letting the
    caller apply its repair.

    Args:
        text: The text being parsed (used to convert character indices to
            byte offsets).
        strict: Raise instead of recording.
    """

    def __init__(self, text: str, strict: bool):
        self.text = text
        self.strict = strict
        self.diagnostics: List[Diagnostic] = []
        self._ascii = text.isascii()
        self._offsets: Optional[np.ndarray] = None

    def offset_of(self, index: Optional[int]) -> Optional[int]:
        if index is None:
            return None
        if self._ascii:
            return index
        if self._offsets is None:
            self._offsets = byte_offset_table(self.text)
        return int(self._offsets[min(index, len(self.text))])

    def report(self, rule: str, index: Optional[int], message: str,
               severity: Severity = Severity.WARNING) -> None:
        """Record (lenient) or raise (strict) a rule violation at char ``index``."""
        offset = self.offset_of(index)
        if self.strict:
            raise GrammarError(message, rule=rule, offset=offset)
        self.diagnostics.append(Diagnostic(severity, rule, offset, message))

    def extend(self, diagnostics: List[Diagnostic], delta: int = 0) -> None:
        self.diagnostics.extend(d.shifted(delta) for d in diagnostics)

    @property
    def errors(self) -> List[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.ERROR]

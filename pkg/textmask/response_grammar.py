"""
Model Response Parsing.

A response wraps a payload in template prose:

    The result is:
    <seg>sky*16
    sky*4|sand*12
    ...</seg>

I-SD responses carry one ``<seg>`` span (the outermost one is used); B-SD
responses carry repeated ``<ref>..</ref><box>..</box><seg>..</seg>`` records.
Prose outside the markers is ignored. The payload is forwarded to the
matching codec in the same mode, and codec diagnostics are rebased to byte
offsets in the full response.

``validate_corpus`` applies ``parse_response`` to every line of a JSONL file.
"""

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .bsd_codec import DEFAULT_CANVAS, BsdRecord, parse_bsd
from .diagnostics import (
    Diagnostic, DiagnosticSink, GrammarError, LabelError, MaskFormatError,
    ParseMode, Severity,
)
from .isd_codec import DescriptorKind, DescriptorText, decode, detect_kind
from .labels import BACKGROUND_LABEL, LabelTable
from .raster import LabelGrid


logger = logging.getLogger(__name__)

SEG_OPEN = "<seg>"
SEG_CLOSE = "</seg>"
_BSD_MARKERS = ("<ref>", "</ref>", "<box>", "</box>", "<seg>", "</seg>")


class TaskKind(str, Enum):
    ISD = "isd"
    BSD = "bsd"


@dataclass(frozen=True)
class IsdExpectation:
    """An I-SD response is expected; ``kind=None`` auto-detects the encoding."""
    rows: int
    cols: int
    table: LabelTable
    kind: Optional[DescriptorKind] = None


@dataclass(frozen=True)
class BsdExpectation:
    canvas_res: int = DEFAULT_CANVAS


Expectation = Union[IsdExpectation, BsdExpectation]


@dataclass(frozen=True)
class ParsedResponse:
    """
    Result of parsing one response.

    ``payload`` is a ``DescriptorText`` for I-SD and a tuple of
    ``BsdRecord`` for B-SD; ``grid`` is the decoded I-SD grid.
    """
    task_kind: TaskKind
    payload: Union[DescriptorText, Tuple[BsdRecord, ...]]
    diagnostics: List[Diagnostic]
    grid: Optional[LabelGrid] = None

    @property
    def records(self) -> Tuple[BsdRecord, ...]:
        if self.task_kind is not TaskKind.BSD:
            raise AttributeError("I-SD responses have no records")
        return self.payload

    @property
    def errors(self) -> List[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.ERROR]


# ============================================================================
# Single Response
# ============================================================================

def _seg_span(text: str, sink: DiagnosticSink) -> Tuple[int, int]:
    """Character span of the I-SD payload."""
    start = text.find(SEG_OPEN)
    first_close = text.find(SEG_CLOSE)
    last_close = text.rfind(SEG_CLOSE)

    if start < 0:
        if last_close >= 0:
            sink.report("missing-seg", last_close, f"{SEG_CLOSE} without {SEG_OPEN}; payload taken from start of text")
            return 0, last_close
        sink.report("missing-seg", None, f"Response has no {SEG_OPEN} marker; whole text taken as payload")
        return 0, len(text)

    if 0 <= first_close < start:
        sink.report("marker-order", first_close, f"{SEG_CLOSE} appears before {SEG_OPEN}")

    begin = start + len(SEG_OPEN)
    if last_close < begin:
        sink.report("unterminated-seg", len(text), f"{SEG_OPEN} is not closed; payload runs to end of text")
        end = len(text)
    else:
        end = last_close

    inner = [i for i in (text.find(SEG_OPEN, begin, end), text.find(SEG_CLOSE, begin, end)) if i >= 0]
    if inner:
        sink.report("unbalanced-markers", min(inner), "Nested or repeated <seg> markers inside the payload")
        end = min(inner)
    return begin, end


def _parse_isd(text: str, expected: IsdExpectation, sink: DiagnosticSink,
               mode: ParseMode) -> ParsedResponse:
    begin, end = _seg_span(text, sink)
    payload = text[begin:end]
    kind = expected.kind or detect_kind(payload, expected.rows)
    delta = sink.offset_of(begin)
    try:
        grid, diagnostics = decode(payload, kind, expected.rows, expected.cols, expected.table, mode)
    except GrammarError as e:
        raise e.shifted(delta) from None
    sink.extend(diagnostics, delta)
    desc = DescriptorText(kind, payload, expected.rows, expected.cols)
    return ParsedResponse(TaskKind.ISD, desc, sink.diagnostics, grid)


def _parse_bsd(text: str, expected: BsdExpectation, sink: DiagnosticSink,
               mode: ParseMode) -> ParsedResponse:
    starts = [i for i in (text.find(m) for m in _BSD_MARKERS) if i >= 0]
    if not starts:
        sink.report("missing-seg", None, "Response holds no B-SD record markers")
        return ParsedResponse(TaskKind.BSD, (), sink.diagnostics)

    begin = min(starts)
    last_close = text.rfind(SEG_CLOSE)
    end = last_close + len(SEG_CLOSE) if last_close >= begin else len(text)
    delta = sink.offset_of(begin)
    try:
        records, diagnostics = parse_bsd(text[begin:end], mode, expected.canvas_res)
    except GrammarError as e:
        raise e.shifted(delta) from None
    sink.extend(diagnostics, delta)
    return ParsedResponse(TaskKind.BSD, tuple(records), sink.diagnostics)


def parse_response(text: str, expected: Expectation,
                   mode: Union[ParseMode, str] = ParseMode.STRICT) -> ParsedResponse:
    """
    Parse a full model response.

    Args:
        text: Response text, prose included.
        expected: ``IsdExpectation`` or ``BsdExpectation``.
        mode: ``strict`` raises ``GrammarError`` (offset relative to ``text``);
            ``lenient`` recovers and reports every repair.

    Examples:
        >>> table = LabelTable.from_labels(["a", "b"])
        >>> parsed = parse_response("The result is: \\n<seg>a*2\\na|b</seg>",
        ...                         IsdExpectation(2, 2, table))
        >>> parsed.grid.to_labels()
        [['a', 'a'], ['a', 'b']]
    """
    mode = ParseMode(mode)
    sink = DiagnosticSink(text, strict=mode is ParseMode.STRICT)
    if isinstance(expected, IsdExpectation):
        return _parse_isd(text, expected, sink, mode)
    return _parse_bsd(text, expected, sink, mode)


# ============================================================================
# Corpus Validation
# ============================================================================

@dataclass
class LineResult:
    line: int
    sample_id: Optional[str]
    diagnostics: List[Diagnostic] = field(default_factory=list)

    @property
    def has_errors(self) -> bool:
        return any(d.severity is Severity.ERROR for d in self.diagnostics)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "line": self.line,
            "id": self.sample_id,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


@dataclass
class CorpusReport:
    path: str
    mode: ParseMode
    results: List[LineResult] = field(default_factory=list)

    @property
    def lines(self) -> int:
        return len(self.results)

    @property
    def error_lines(self) -> List[LineResult]:
        return [r for r in self.results if r.has_errors]

    @property
    def warning_count(self) -> int:
        return sum(1 for r in self.results for d in r.diagnostics if d.severity is Severity.WARNING)

    @property
    def rule_counts(self) -> Dict[str, int]:
        counts = Counter(d.rule for r in self.results for d in r.diagnostics)
        return dict(sorted(counts.items()))

    @property
    def exit_status(self) -> int:
        """Nonzero iff any line has an error-severity diagnostic."""
        return 1 if self.error_lines else 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "path": self.path,
            "mode": self.mode.value,
            "lines": self.lines,
            "valid": self.lines - len(self.error_lines),
            "errors": len(self.error_lines),
            "warnings": self.warning_count,
            "rule_counts": self.rule_counts,
            "results": [r.to_dict() for r in self.results if r.diagnostics],
        }


def expectation_from_meta(meta: Dict[str, Any]) -> Expectation:
    """
    Rebuild the expectation recorded by the dataset builder.

    ``meta`` holds ``format`` (``isd-full``, ``isd-irle``, ``isd-rrle``,
    ``bsd``, ``bsd-nobricks``), ``resolution`` and, for I-SD, ``labels``.
    """
    fmt = meta.get("format", "")
    resolution = int(meta.get("resolution", DEFAULT_CANVAS))
    if fmt.startswith("bsd"):
        return BsdExpectation(resolution)
    if fmt.startswith("isd-"):
        table = LabelTable.from_labels(meta.get("labels", []), meta.get("background", BACKGROUND_LABEL))
        return IsdExpectation(resolution, resolution, table, DescriptorKind(fmt[4:]))
    raise ValueError(f"Unknown sample format {fmt!r}")


def response_text(record: Dict[str, Any], field_name: str = "response") -> Optional[str]:
    """The response under ``field_name``, else the last gpt turn of ``conversations``."""
    value = record.get(field_name)
    if isinstance(value, str):
        return value
    for turn in reversed(record.get("conversations") or []):
        if isinstance(turn, dict) and turn.get("from") == "gpt" and isinstance(turn.get("value"), str):
            return turn["value"]
    return None


def _error(rule: str, message: str, offset: Optional[int] = None) -> Diagnostic:
    return Diagnostic(Severity.ERROR, rule, offset, message)


def validate_line(line_no: int, raw: str, expected: Optional[Expectation],
                  mode: ParseMode, field_name: str = "response") -> LineResult:
    """Validate one JSONL line; never raises on content."""
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as e:
        return LineResult(line_no, None, [_error("invalid-json", e.msg, e.pos)])
    if not isinstance(record, dict):
        return LineResult(line_no, None, [_error("invalid-json", "Line is not a JSON object")])

    sample_id = record.get("id")
    sample_id = None if sample_id is None else str(sample_id)
    text = response_text(record, field_name)
    if text is None:
        return LineResult(line_no, sample_id, [_error("missing-field", f"No {field_name!r} field or gpt turn")])

    try:
        exp = expected if expected is not None else expectation_from_meta(record.get("meta") or {})
    except (ValueError, LabelError) as e:
        return LineResult(line_no, sample_id, [_error("missing-expectation", str(e))])

    try:
        parsed = parse_response(text, exp, mode)
    except MaskFormatError as e:
        return LineResult(line_no, sample_id, [_error(e.rule, e.message, e.offset)])
    except (LabelError, ValueError) as e:
        return LineResult(line_no, sample_id, [_error("invalid-response", str(e))])
    return LineResult(line_no, sample_id, list(parsed.diagnostics))


def validate_corpus(path: Union[str, Path], expected: Optional[Expectation] = None,
                    mode: Union[ParseMode, str] = ParseMode.STRICT,
                    field_name: str = "response", workers: int = 1) -> CorpusReport:
    """
    Validate every response in a JSONL corpus.

    Expectations come from ``expected`` or, when it is ``None``, from each
    line's ``meta`` block. Blank lines are skipped. Lines are numbered from 1.

    Raises:
        OSError: If the file cannot be read.
    """
    mode = ParseMode(mode)
    with open(path, "r", encoding="utf-8") as f:
        lines: Sequence[Tuple[int, str]] = [
            (i, raw) for i, raw in enumerate(f, start=1) if raw.strip()
        ]

    def check(item: Tuple[int, str]) -> LineResult:
        return validate_line(item[0], item[1], expected, mode, field_name)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(check, lines))
    else:
        results = [check(item) for item in lines]

    report = CorpusReport(str(path), mode, results)
    for r in report.error_lines:
        logger.debug("line %d: %s", r.line, "; ".join(str(d) for d in r.diagnostics))
    logger.info("validated %d line(s) of %s: %d with errors, %d warning(s)",
                report.lines, path, len(report.error_lines), report.warning_count)
    return report

"""
Token-Length Analysis.

Two tokenizers count sequence lengths:

    - ReferenceTokenizer: deterministic rules, no external data
        <ref> </ref> <box> </box> <seg> </seg>   one token each
        fg1..fg63, bg1..bg63 as whole words     one token each
        a maximal run of letters                one token
        a digit                                 one token
        a newline                               one token
        spaces and tabs                         nothing
        any other character                     one token
      so ``others*16`` is ``others``, ``*``, ``1``, ``6``.
    - VocabTokenizer: greedy longest match against a newline-delimited
      vocabulary file (the line ``\\n``, backslash + n, stands for a newline)

``count_corpus`` groups instruction samples by format and resolution;
``compare_encodings`` counts one grid in every encoding.
"""

import csv
import json
import logging
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from .bsd_codec import BRICK_VOCABULARY, MARKERS, encode_record, serialize_bsd
from .config import TokenizerKind, TokenizerSpec
from .diagnostics import LabelError, MaskFormatError, ParseMode
from .isd_codec import DescriptorKind, encode
from .labels import BACKGROUND_ID
from .raster import LabelGrid, LabelMask, binarize, downsample_mask
from .response_grammar import TaskKind, expectation_from_meta, parse_response, response_text


logger = logging.getLogger(__name__)

ENCODINGS = ("isd-full", "isd-irle", "isd-rrle", "bsd-nobricks", "bsd")


# ============================================================================
# Tokenizers
# ============================================================================

class Tokenizer(Protocol):
    def tokenize(self, text: str) -> List[str]: ...


_REFERENCE_RE = re.compile(
    r"""
      </?(?:ref|box|seg)>
    | (?<![^\W_])(?:fg|bg)(?:6[0-3]|[1-5][0-9]|[1-9])(?![^\W_])
    | [^\W\d_]+
    | \d
    | \n
    | [^\s]
    """,
    re.VERBOSE,
)


class ReferenceTokenizer:
    """Rule-based tokenizer calibrated on ``others*16`` -> 4 tokens."""

    def tokenize(self, text: str) -> List[str]:
        return _REFERENCE_RE.findall(text)


def ref_tokenize(text: str) -> List[str]:
    """
    Tokenize with the reference rules.

    Examples:
        >>> ref_tokenize("others*16")
        ['others', '*', '1', '6']
        >>> ref_tokenize("fg12 bg3")
        ['fg12', 'bg3']
    """
    return _REFERENCE_RE.findall(text)


class VocabTokenizer:
    """
    Greedy longest-match tokenizer over a fixed vocabulary.

    Spaces and tabs delimit without emitting tokens; a character no
    vocabulary entry starts with becomes ``unk_token``.
    """

    def __init__(self, vocab: Iterable[str], unk_token: str = "[UNK]"):
        self.vocab = {token for token in vocab if token}
        if not self.vocab:
            raise ValueError("Vocabulary is empty")
        self.unk_token = unk_token
        self.max_len = max(len(token) for token in self.vocab)

    @classmethod
    def from_file(cls, path: Union[str, Path], unk_token: str = "[UNK]") -> "VocabTokenizer":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\r\n") for line in f]
        return cls(("\n" if t == "\\n" else t for t in tokens), unk_token)

    def tokenize(self, text: str) -> List[str]:
        tokens = []
        pos = 0
        while pos < len(text):
            if text[pos] in " \t":
                pos += 1
                continue
            for end in range(min(len(text), pos + self.max_len), pos, -1):
                if text[pos:end] in self.vocab:
                    tokens.append(text[pos:end])
                    pos = end
                    break
            else:
                tokens.append(self.unk_token)
                pos += 1
        return tokens


def make_tokenizer(spec: Optional[TokenizerSpec] = None) -> Tokenizer:
    spec = spec or TokenizerSpec()
    if spec.kind is TokenizerKind.VOCAB_FILE:
        return VocabTokenizer.from_file(spec.path)
    return ReferenceTokenizer()


def export_vocabulary(path: Union[str, Path], include_markers: bool = True) -> int:
    """Write brick (and marker) tokens one per line; returns the count written."""
    tokens = list(BRICK_VOCABULARY) + (list(MARKERS) if include_markers else [])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for token in tokens:
            f.write(token + "\n")
    return len(tokens)


# ============================================================================
# Reports
# ============================================================================

@dataclass(frozen=True)
class LengthStats:
    samples: int
    mean: float
    median: float
    min: int
    max: int

    @classmethod
    def of(cls, counts: Sequence[int]) -> "LengthStats":
        return cls(len(counts), float(statistics.mean(counts)), float(statistics.median(counts)),
                   min(counts), max(counts))

    def to_dict(self) -> Dict[str, Any]:
        return {"samples": self.samples, "mean": self.mean, "median": self.median,
                "min": self.min, "max": self.max}


@dataclass
class LengthReport:
    """
    Token-length statistics per group, with mean-length ratios.

    I-SD samples are counted by their descriptor payload alone, without the
    ``<seg>`` markers or the response prefix. B-SD samples are counted as the
    whole record sequence including its markers. Ratios between the two
    families compare these descriptor texts, not full responses.
    """
    groups: Dict[str, LengthStats] = field(default_factory=dict)
    ratios: Dict[str, float] = field(default_factory=dict)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    def mean(self, group: str) -> float:
        return self.groups[group].mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            "groups": {k: self.groups[k].to_dict() for k in sorted(self.groups)},
            "ratios": dict(sorted(self.ratios.items())),
            "failures": [{"id": i, "reason": r} for i, r in self.failures],
        }

    def write_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["group", "samples", "mean", "median", "min", "max"])
            for key in sorted(self.groups):
                s = self.groups[key]
                writer.writerow([key, s.samples, s.mean, s.median, s.min, s.max])


def _split_key(key: str) -> Tuple[str, str]:
    fmt, _, res = key.partition("@")
    return fmt, res


def _base_key(fmt: str, res: str) -> str:
    base = "isd-full" if fmt.startswith("isd-") else "isd-rrle"
    return f"{base}@{res}" if res else base


def _ratios(groups: Mapping[str, LengthStats]) -> Dict[str, float]:
    """Mean-length ratios: I-SD run encodings against FULL, B-SD against R-RLE."""
    ratios = {}
    for key, stats in groups.items():
        fmt, res = _split_key(key)
        if fmt not in ("isd-irle", "isd-rrle", "bsd", "bsd-nobricks"):
            continue
        base = _base_key(fmt, res)
        if base in groups and groups[base].mean > 0:
            ratios[f"{key}/{base}"] = stats.mean / groups[base].mean
    return ratios


def summarize(counts: Mapping[str, Sequence[int]],
              failures: Sequence[Tuple[str, str]] = ()) -> LengthReport:
    groups = {key: LengthStats.of(values) for key, values in counts.items() if values}
    return LengthReport(groups, _ratios(groups), list(failures))


# ============================================================================
# Corpus and Sample Counting
# ============================================================================

def payload_text(text: str, meta: Mapping[str, Any]) -> str:
    """
    The descriptor part of a response: the ``<seg>`` payload for I-SD (markers
    excluded), the full record sequence for B-SD. Parsed strictly.
    """
    parsed = parse_response(text, expectation_from_meta(dict(meta)), ParseMode.STRICT)
    if parsed.task_kind is TaskKind.ISD:
        return parsed.payload.payload
    return serialize_bsd(parsed.records, use_bricks=meta.get("format") == "bsd")


def _group_key(meta: Mapping[str, Any], group_by: Sequence[str]) -> str:
    parts = []
    if "format" in group_by:
        parts.append(str(meta.get("format")))
    if "resolution" in group_by:
        parts.append(str(meta.get("resolution")))
    return "@".join(parts) or "all"


def count_corpus(samples: Union[str, Path, Iterable[Mapping[str, Any]]],
                 tokenizer: Optional[Union[Tokenizer, TokenizerSpec]] = None,
                 group_by: Sequence[str] = ("format", "resolution"),
                 field_name: str = "response") -> LengthReport:
    """
    Token-length statistics of an instruction corpus.

    Args:
        samples: Instruction JSONL path, or already-loaded sample dicts.
        tokenizer: A tokenizer or a ``TokenizerSpec`` (default: reference).
        group_by: Any of ``"format"``, ``"resolution"``.
        field_name: Response field; falls back to the last gpt turn.

    Returns:
        Per-group statistics keyed ``format@resolution``, compression ratios
        and per-sample failures.
    """
    if tokenizer is None or isinstance(tokenizer, TokenizerSpec):
        tokenizer = make_tokenizer(tokenizer)
    if isinstance(samples, (str, Path)):
        with open(samples, "r", encoding="utf-8") as f:
            samples = [json.loads(line) for line in f if line.strip()]

    counts: Dict[str, List[int]] = {}
    failures: List[Tuple[str, str]] = []
    for record in samples:
        sample_id = str(record.get("id"))
        meta = record.get("meta") or {}
        text = response_text(record, field_name)
        if text is None:
            failures.append((sample_id, "no response"))
            continue
        try:
            payload = payload_text(text, meta)
        except (MaskFormatError, LabelError, ValueError) as e:
            failures.append((sample_id, str(e)))
            continue
        counts.setdefault(_group_key(meta, group_by), []).append(len(tokenizer.tokenize(payload)))

    if failures:
        logger.warning("%d sample(s) could not be counted", len(failures))
    return summarize(counts, failures)


def encoding_texts(grid: LabelGrid) -> Dict[str, str]:
    """
    One grid in every encoding.

    Each non-background label of a square grid is one B-SD instance, named
    by its label text.
    """
    texts = {f"isd-{kind.value}": encode(grid, kind).payload for kind in DescriptorKind}
    if grid.rows == grid.cols:
        records = [
            encode_record(binarize(grid, label_id), label)
            for label_id, label in grid.table.entries
            if label_id != BACKGROUND_ID
        ]
        texts["bsd-nobricks"] = serialize_bsd(records, use_bricks=False)
        texts["bsd"] = serialize_bsd(records, use_bricks=True)
    return texts


def compare_encodings(grid: LabelGrid,
                      tokenizer: Optional[Union[Tokenizer, TokenizerSpec]] = None) -> Dict[str, int]:
    """
    Token counts of one grid in every encoding.

    Examples:
        >>> table = LabelTable.from_labels([])
        >>> compare_encodings(LabelGrid.filled(16, 16, table))["isd-rrle"]
        79
    """
    if tokenizer is None or isinstance(tokenizer, TokenizerSpec):
        tokenizer = make_tokenizer(tokenizer)
    return {name: len(tokenizer.tokenize(text)) for name, text in encoding_texts(grid).items()}


def resolution_sweep(masks: Iterable[LabelMask], resolutions: Sequence[int],
                     tokenizer: Optional[Union[Tokenizer, TokenizerSpec]] = None) -> LengthReport:
    """Token counts of every encoding with masks downsampled to each resolution."""
    if tokenizer is None or isinstance(tokenizer, TokenizerSpec):
        tokenizer = make_tokenizer(tokenizer)
    counts: Dict[str, List[int]] = {}
    for mask in masks:
        for res in resolutions:
            grid = downsample_mask(mask, res, res)
            for name, n in compare_encodings(grid, tokenizer).items():
                counts.setdefault(f"{name}@{res}", []).append(n)
    return summarize(counts)

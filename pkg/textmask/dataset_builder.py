"""
Instruction Dataset Builder.

Converts raster segmentation annotations into query/response pairs:

    human: <image>\\nCan you segment the black dog in the image?
    gpt:   The result is: \\n<seg>others*16\\n...</seg>

Task families:
    - semantic: ``mask`` + ``labels`` table; every class is a descriptor label
    - referring / generalized_referring: one binary ``instance_masks`` entry
      per instance, named by ``referents`` (one referent may cover all
      instances)
    - reasoning: instances are named ``roi0``, ``roi1``, ... in annotation
      order and the query is built from ``question``
    - ``no_target`` samples carry no geometry; I-SD payloads are all
      background and B-SD records are ``<box>[[]]</box><seg></seg>``

Every built response is parsed back in strict mode and compared with the
ground truth it was built from (``self_check``).
"""

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .api import SampleFormat, TaskFamily, encode_records
from .bsd_codec import DEFAULT_CANVAS, BsdRecord, encode_record, serialize_bsd
from .config import CliConfig, TemplateSet
from .diagnostics import LabelError, MaskFormatError
from .isd_codec import DescriptorKind, encode
from .labels import BACKGROUND_LABEL, LabelTable
from .raster import LabelGrid, LabelMask, binary_mask_grid, downsample_mask
from .raster_io import load_binary_mask, read_label_map
from .response_grammar import BsdExpectation, IsdExpectation, parse_response


logger = logging.getLogger(__name__)

_REFERRING = (TaskFamily.REFERRING, TaskFamily.GENERALIZED_REFERRING)


class SelfCheckError(MaskFormatError):
    """A built response did not parse back to its ground truth."""


# ============================================================================
# Schemas
# ============================================================================

class Annotation(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: str
    image: str
    task: TaskFamily
    mask: Optional[str] = None
    labels: Optional[str] = None
    instance_masks: List[str] = Field(default_factory=list)
    referents: List[str] = Field(default_factory=list)
    question: Optional[str] = None
    no_target: bool = False

    @model_validator(mode="after")
    def _check_task(self) -> "Annotation":
        if self.task in _REFERRING and not self.referents:
            raise ValueError(f"{self.task.value} annotation needs at least one referent")
        if self.task is TaskFamily.REASONING and not self.question:
            raise ValueError("reasoning annotation needs a question")
        if self.no_target:
            if self.instance_masks or self.mask:
                raise ValueError("no_target annotation must not carry masks")
            return self
        if self.task is TaskFamily.SEMANTIC:
            if not (self.mask and self.labels):
                raise ValueError("semantic annotation needs mask and labels")
        elif not self.instance_masks:
            raise ValueError(f"{self.task.value} annotation needs instance_masks")
        elif self.task in _REFERRING and len(self.referents) not in (1, len(self.instance_masks)):
            raise ValueError("referents must name one target or one per instance mask")
        return self

    def instance_names(self) -> List[str]:
        """Referent text for each instance mask (or each no-target query)."""
        count = len(self.instance_masks) or max(len(self.referents), 1)
        if self.task is TaskFamily.REASONING or not self.referents:
            return [f"roi{i}" for i in range(count)]
        if len(self.referents) == 1:
            return self.referents * count
        return list(self.referents)


class ConversationTurn(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    from_: str = Field(alias="from")
    value: str


class SampleMeta(BaseModel):
    task: TaskFamily
    format: SampleFormat
    resolution: int
    labels: List[str] = Field(default_factory=list)
    background: str = BACKGROUND_LABEL


class InstructionSample(BaseModel):
    id: str
    image: str
    conversations: List[ConversationTurn]
    meta: SampleMeta

    @property
    def query(self) -> str:
        return self.conversations[0].value

    @property
    def response(self) -> str:
        return self.conversations[-1].value

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), ensure_ascii=False)


# ============================================================================
# Ground Truth
# ============================================================================

def _resolve(path: str, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


def _unique(names: List[str]) -> List[str]:
    return list(dict.fromkeys(names))


def _compact(grid: LabelGrid) -> LabelGrid:
    """Renumber labels to ids 1..n in table order."""
    entries = [(i, label) for i, label in grid.table.entries if i != 0]
    table = LabelTable.from_labels([label for _, label in entries], background=grid.table.background)
    lut = np.zeros(max(grid.table.ids) + 1, dtype=np.int64)
    for new_id, (old_id, _) in enumerate(entries, start=1):
        lut[old_id] = new_id
    return LabelGrid(lut[grid.cells], table)


def _instance_bits(ann: Annotation, base_dir: Optional[Path]) -> List[np.ndarray]:
    masks = [load_binary_mask(_resolve(p, base_dir)) for p in ann.instance_masks]
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise ValueError(f"{ann.id}: instance masks differ in size {sorted(shapes)}")
    return masks


def isd_ground_truth(ann: Annotation, resolution: int,
                     base_dir: Optional[Path] = None) -> LabelGrid:
    """The downsampled grid an I-SD sample for ``ann`` encodes (ids 1..n)."""
    if ann.task is TaskFamily.SEMANTIC and not ann.no_target:
        table = LabelTable.load(_resolve(ann.labels, base_dir))
        mask = LabelMask(read_label_map(_resolve(ann.mask, base_dir)), table)
        return _compact(downsample_mask(mask, resolution, resolution))

    names = ann.instance_names()
    labels = _unique(names)
    table = LabelTable.from_labels(labels)
    if ann.no_target:
        return LabelGrid.filled(resolution, resolution, table)

    masks = _instance_bits(ann, base_dir)
    painted = np.zeros(masks[0].shape, dtype=np.int64)
    for name, bits in zip(names, masks):
        painted[bits] = labels.index(name) + 1
    return downsample_mask(LabelMask(painted, table), resolution, resolution)


def bsd_ground_truth(ann: Annotation, canvas_res: int = DEFAULT_CANVAS,
                     base_dir: Optional[Path] = None) -> List[BsdRecord]:
    """One record per instance, in annotation order."""
    if ann.no_target:
        return [BsdRecord(name, None, (), canvas_res) for name in _unique(ann.instance_names())]

    if ann.task is TaskFamily.SEMANTIC:
        table = LabelTable.load(_resolve(ann.labels, base_dir))
        mask = LabelMask(read_label_map(_resolve(ann.mask, base_dir)), table)
        if len(table) < 2:
            raise LabelError(f"{ann.id}: label table names no class besides the background")
        # classes absent from the mask become no-target records
        return encode_records(mask, canvas_res)

    return [
        encode_record(binary_mask_grid(bits, canvas_res, canvas_res), name)
        for name, bits in zip(ann.instance_names(), _instance_bits(ann, base_dir))
    ]


# ============================================================================
# Samples
# ============================================================================

def _query(ann: Annotation, labels: List[str], templates: TemplateSet) -> str:
    if ann.task is TaskFamily.REASONING:
        text = TemplateSet.pick(templates.reasoning, ann.id).format(question=ann.question)
    else:
        text = TemplateSet.pick(templates.query, ann.id).format(labels=", ".join(labels))
    return f"{templates.image_token}\n{text}"


def _sample(ann: Annotation, sample_id: str, query: str, response: str,
            fmt: SampleFormat, resolution: int, labels: List[str] = (),
            background: str = BACKGROUND_LABEL) -> InstructionSample:
    return InstructionSample(
        id=sample_id,
        image=ann.image,
        conversations=[
            ConversationTurn(from_="human", value=query),
            ConversationTurn(from_="gpt", value=response),
        ],
        meta=SampleMeta(task=ann.task, format=fmt, resolution=resolution,
                        labels=list(labels), background=background),
    )


def build_isd_sample(ann: Annotation, resolution: int = 16,
                     encoding: Union[DescriptorKind, str] = DescriptorKind.RRLE,
                     templates: Optional[TemplateSet] = None,
                     base_dir: Optional[Path] = None, self_check: bool = True,
                     sample_id: Optional[str] = None) -> InstructionSample:
    """
    Build an I-SD instruction sample.

    The response is ``"The result is: \\n<seg>" + payload + "</seg>"`` where
    the payload encodes the ``resolution x resolution`` ground-truth grid.

    Raises:
        OSError: A mask file is missing.
        LabelError: A referent contains a reserved character.
        SelfCheckError: The response does not parse back to the ground truth.
    """
    if resolution < 1:
        raise ValueError(f"Resolution must be >= 1, got {resolution}")
    templates = templates or TemplateSet()
    kind = DescriptorKind(encoding)
    grid = isd_ground_truth(ann, resolution, base_dir)
    labels = list(grid.table.labels[1:])
    response = f"{templates.response_prefix}<seg>{encode(grid, kind).payload}</seg>"

    if self_check:
        parsed = parse_response(response, IsdExpectation(resolution, resolution, grid.table, kind))
        if parsed.grid != grid:
            raise SelfCheckError(f"{ann.id}: I-SD response does not reproduce its grid", rule="self-check")

    query_labels = labels if ann.task is TaskFamily.SEMANTIC else _unique(ann.instance_names())
    fmt = SampleFormat(f"isd-{kind.value}")
    return _sample(ann, sample_id or ann.id, _query(ann, query_labels, templates), response,
                   fmt, resolution, labels, grid.table.background)


def build_bsd_sample(ann: Annotation, canvas_res: int = DEFAULT_CANVAS,
                     templates: Optional[TemplateSet] = None, use_bricks: bool = True,
                     base_dir: Optional[Path] = None, self_check: bool = True,
                     sample_id: Optional[str] = None) -> InstructionSample:
    """
    Build a B-SD instruction sample: one record per instance, wrapped in the
    response prefix.
    """
    if canvas_res < 1:
        raise ValueError(f"Canvas resolution must be >= 1, got {canvas_res}")
    templates = templates or TemplateSet()
    records = bsd_ground_truth(ann, canvas_res, base_dir)
    response = templates.response_prefix + serialize_bsd(records, use_bricks=use_bricks)

    if self_check:
        parsed = parse_response(response, BsdExpectation(canvas_res))
        if list(parsed.records) != records:
            raise SelfCheckError(f"{ann.id}: B-SD response does not reproduce its records", rule="self-check")

    query_labels = [r.referent for r in records] if ann.task is TaskFamily.SEMANTIC \
        else _unique(ann.instance_names())
    fmt = SampleFormat.BSD if use_bricks else SampleFormat.BSD_NOBRICKS
    return _sample(ann, sample_id or ann.id, _query(ann, query_labels, templates), response,
                   fmt, canvas_res)


def build_sample(ann: Annotation, fmt: Union[SampleFormat, str], config: CliConfig,
                 base_dir: Optional[Path] = None, sample_id: Optional[str] = None) -> InstructionSample:
    fmt = SampleFormat(fmt)
    if fmt.is_isd:
        return build_isd_sample(ann, config.resolution, fmt.descriptor_kind, config.templates,
                                base_dir, config.build.self_check, sample_id)
    return build_bsd_sample(ann, config.canvas_res, config.templates, fmt.use_bricks,
                            base_dir, config.build.self_check, sample_id)


# ============================================================================
# Corpus
# ============================================================================

@dataclass
class BuildReport:
    annotations: int = 0
    samples: int = 0
    skipped: List[Tuple[int, str]] = field(default_factory=list)
    by_task: Dict[str, int] = field(default_factory=dict)
    by_format: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "annotations": self.annotations,
            "samples": self.samples,
            "skipped": [{"line": line, "reason": reason} for line, reason in self.skipped],
            "by_task": dict(sorted(self.by_task.items())),
            "by_format": dict(sorted(self.by_format.items())),
        }


_BUILD_ERRORS = (OSError, MaskFormatError, LabelError, ValueError)


def build_corpus(annotations_path: Union[str, Path], output_path: Union[str, Path],
                 config: Optional[CliConfig] = None) -> BuildReport:
    """
    Convert an annotation JSONL file into an instruction JSONL file.

    Output order follows input order (one sample per annotation and format).
    Bad lines are logged and skipped, or raised when ``build.fail_fast`` is
    set. Relative mask paths resolve against the annotation file's directory.
    """
    config = config or CliConfig()
    annotations_path = Path(annotations_path)
    base_dir = annotations_path.parent
    formats = config.build.formats
    tasks = set(config.build.tasks) if config.build.tasks else None

    with open(annotations_path, "r", encoding="utf-8") as f:
        lines = [(i, raw) for i, raw in enumerate(f, start=1) if raw.strip()]

    def convert(item: Tuple[int, str]) -> Tuple[int, Optional[Annotation], List[InstructionSample], Optional[str]]:
        line_no, raw = item
        try:
            ann = Annotation.model_validate_json(raw)
            if tasks is not None and ann.task not in tasks:
                return line_no, None, [], None
            samples = [
                build_sample(ann, fmt, config, base_dir,
                             ann.id if len(formats) == 1 else f"{ann.id}#{fmt.value}")
                for fmt in formats
            ]
            return line_no, ann, samples, None
        except _BUILD_ERRORS as e:
            if config.build.fail_fast:
                raise
            return line_no, None, [], str(e)

    if config.build.workers > 1:
        with ThreadPoolExecutor(max_workers=config.build.workers) as pool:
            results = list(pool.map(convert, lines))
    else:
        results = [convert(item) for item in lines]

    report = BuildReport()
    by_task: Counter = Counter()
    by_format: Counter = Counter()
    with open(output_path, "w", encoding="utf-8", newline="\n") as out:
        for line_no, ann, samples, error in results:
            if error is not None:
                logger.warning("line %d skipped: %s", line_no, error)
                report.skipped.append((line_no, error))
                continue
            if ann is None:
                continue
            report.annotations += 1
            by_task[ann.task.value] += 1
            for sample in samples:
                out.write(sample.to_json())
                out.write("\n")
                by_format[sample.meta.format.value] += 1
                report.samples += 1

    report.by_task = dict(by_task)
    report.by_format = dict(by_format)
    logger.info("built %d sample(s) from %d annotation(s), %d skipped",
                report.samples, report.annotations, len(report.skipped))
    return report

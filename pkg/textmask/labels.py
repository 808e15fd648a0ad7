"""
Label Tables.

A ``LabelTable`` is the bidirectional map between integer label ids stored in
masks and grids, and the text labels written into semantic descriptors
(class names, referring phrases, ``roiN`` identifiers).

Rules:
    - ids are unique non-negative integers; labels are unique and non-empty
    - id 0 is always present and names the background (default "others")
    - no label contains a reserved character: ``|``, ``*``, newline, ``<``, ``>``

On disk a table is a JSON object mapping id (as a string key) to label:
    {"0": "others", "1": "sky", "2": "sand"}
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

from .diagnostics import LabelError


BACKGROUND_ID = 0
BACKGROUND_LABEL = "others"
RESERVED_CHARS = frozenset("|*\n<>")


def check_label(label: str) -> str:
    """Validate a single label text, returning it unchanged."""
    if not isinstance(label, str) or not label:
        raise LabelError(f"Label must be a non-empty string, got {label!r}")
    bad = RESERVED_CHARS.intersection(label)
    if bad:
        raise LabelError(
            f"Label {label!r} contains reserved character(s) {sorted(bad)!r}"
        )
    return label


@dataclass(frozen=True)
class LabelTable:
    """
    Immutable id <-> label map.

    Use the factories rather than the constructor:
        >>> table = LabelTable.from_labels(["sky", "sand"])
        >>> table.label_of(1)
        'sky'
        >>> table.id_of("sand")
        2
    """
    entries: Tuple[Tuple[int, str], ...]
    _by_id: Dict[int, str] = field(init=False, repr=False, compare=False)
    _by_label: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id: Dict[int, str] = {}
        by_label: Dict[str, int] = {}
        for label_id, label in self.entries:
            if not isinstance(label_id, int) or isinstance(label_id, bool) or label_id < 0:
                raise LabelError(f"Label id must be a non-negative integer, got {label_id!r}")
            check_label(label)
            if label_id in by_id:
                raise LabelError(f"Duplicate label id {label_id}")
            if label in by_label:
                raise LabelError(f"Duplicate label {label!r}")
            by_id[label_id] = label
            by_label[label] = label_id
        if BACKGROUND_ID not in by_id:
            raise LabelError("Label table must contain background id 0")
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_label", by_label)

    # ------------------------------------------------------------------
    # Factories
    # ------------------------------------------------------------------

    @classmethod
    def from_labels(cls, labels: Iterable[str],
                    background: str = BACKGROUND_LABEL) -> "LabelTable":
        """Assign ids 1..n to ``labels`` in order; id 0 is ``background``."""
        entries = [(BACKGROUND_ID, background)]
        entries.extend((i, label) for i, label in enumerate(labels, start=1))
        return cls(tuple(entries))

    @classmethod
    def from_mapping(cls, mapping: Mapping[Union[int, str], str]) -> "LabelTable":
        """
        Build a table from an id -> label mapping (keys may be digit strings).

        A mapping without id 0 gets the default background label inserted.
        """
        entries = {}
        for key, label in mapping.items():
            try:
                label_id = int(key)
            except (TypeError, ValueError):
                raise LabelError(f"Label id must be an integer, got {key!r}") from None
            entries[label_id] = label
        if BACKGROUND_ID not in entries:
            warnings.warn(
                f"Label table has no id {BACKGROUND_ID}; "
                f"inserting background label {BACKGROUND_LABEL!r}"
            )
            entries[BACKGROUND_ID] = BACKGROUND_LABEL
        return cls(tuple(sorted(entries.items())))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LabelTable":
        """Load a JSON id -> label table."""
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise LabelError(f"{path}: label table must be a JSON object")
        return cls.from_mapping(data)

    @classmethod
    def for_referents(cls, referents: Iterable[str]) -> "LabelTable":
        """
        Build a table whose labels are derived from free-form referents.

        Reserved characters are replaced by spaces, blank referents become
        ``roiN`` and duplicates get a numeric suffix, so any referent list
        yields a valid table with id i+1 for referent i.
        """
        used = {BACKGROUND_LABEL}
        labels = []
        for i, referent in enumerate(referents):
            text = "".join(" " if ch in RESERVED_CHARS else ch for ch in referent).strip()
            text = text or f"roi{i}"
            candidate, n = text, 2
            while candidate in used:
                candidate = f"{text} {n}"
                n += 1
            used.add(candidate)
            labels.append(candidate)
        return cls.from_labels(labels)

    # ------------------------------------------------------------------
    # Lookup
    # ------------------------------------------------------------------

    def label_of(self, label_id: int) -> str:
        try:
            return self._by_id[label_id]
        except KeyError:
            raise LabelError(f"Label id {label_id} is not in the label table") from None

    def id_of(self, label: str) -> Optional[int]:
        return self._by_label.get(label)

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(label_id for label_id, _ in self.entries)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for _, label in self.entries)

    @property
    def background(self) -> str:
        return self._by_id[BACKGROUND_ID]

    def __contains__(self, label_id: object) -> bool:
        return label_id in self._by_id

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> Dict[str, str]:
        return {str(label_id): label for label_id, label in self.entries}

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
            f.write("\n")


BINARY_TABLE = LabelTable(((BACKGROUND_ID, "bg"), (1, "fg")))
"""Two-label table used for in-box binary descriptors (B-SD without bricks)."""

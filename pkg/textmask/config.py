"""
Configuration Models.

All settings are pydantic models with ``extra="forbid"``, so a typo in a
config file is a validation error rather than a silently ignored key.

A config file is TOML or JSON:

    resolution = 16
    encoding = "rrle"
    canvas_res = 64

    [build]
    formats = ["isd-rrle", "bsd"]
    workers = 4

    [templates]
    query = ["Can you segment the {labels} in the image?"]

``load_config()`` without a path reads the file named by ``TEXTMASK_CONFIG``
and falls back to the defaults.
"""

import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import zlib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .api import SampleFormat, TaskFamily
from .diagnostics import ParseMode
from .isd_codec import DescriptorKind


CONFIG_ENV_VAR = "TEXTMASK_CONFIG"

DEFAULT_QUERY = "Can you segment the {labels} in the image?"
DEFAULT_REASONING = "{question} Please segment the relevant regions in the image."
DEFAULT_RESPONSE_PREFIX = "The result is: \n"


class ConfigError(ValueError):
    """Raised when a config file cannot be read or has an unknown format."""


class TokenizerKind(str, Enum):
    REFERENCE = "reference"
    VOCAB_FILE = "vocab_file"


class TokenizerSpec(BaseModel):
    """Which tokenizer counts tokens; ``vocab_file`` needs ``path``."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: TokenizerKind = TokenizerKind.REFERENCE
    path: Optional[Path] = None

    @model_validator(mode="after")
    def _vocab_needs_path(self) -> "TokenizerSpec":
        if self.kind is TokenizerKind.VOCAB_FILE and self.path is None:
            raise ValueError("vocab_file tokenizer requires a path")
        return self


class TemplateSet(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    query: List[str] = Field(default_factory=lambda: [DEFAULT_QUERY], min_length=1)
    reasoning: List[str] = Field(default_factory=lambda: [DEFAULT_REASONING], min_length=1)
    response_prefix: str = DEFAULT_RESPONSE_PREFIX
    image_token: str = "<image>"

    @field_validator("query")
    @classmethod
    def _query_has_labels(cls, value: List[str]) -> List[str]:
        for template in value:
            if "{labels}" not in template:
                raise ValueError(f"Query template {template!r} lacks a {{labels}} field")
        return value

    @field_validator("reasoning")
    @classmethod
    def _reasoning_has_question(cls, value: List[str]) -> List[str]:
        for template in value:
            if "{question}" not in template:
                raise ValueError(f"Reasoning template {template!r} lacks a {{question}} field")
        return value

    @staticmethod
    def pick(templates: Sequence[str], key: str) -> str:
        """Stable choice among paraphrases, keyed by sample id."""
        return templates[zlib.crc32(key.encode("utf-8")) % len(templates)]


class BuildOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    formats: List[SampleFormat] = Field(default_factory=lambda: [SampleFormat.ISD_RRLE], min_length=1)
    tasks: Optional[List[TaskFamily]] = None
    fail_fast: bool = False
    self_check: bool = True
    workers: int = Field(1, ge=1)


class CliConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    resolution: int = Field(16, ge=1)
    encoding: DescriptorKind = DescriptorKind.RRLE
    canvas_res: int = Field(64, ge=1)
    lenient: bool = False
    fail_on_warning: bool = False
    tokenizer: TokenizerSpec = Field(default_factory=TokenizerSpec)
    templates: TemplateSet = Field(default_factory=TemplateSet)
    build: BuildOptions = Field(default_factory=BuildOptions)
    response_field: str = "response"

    @property
    def mode(self) -> ParseMode:
        return ParseMode.LENIENT if self.lenient else ParseMode.STRICT

    def with_overrides(self, **overrides: Any) -> "CliConfig":
        """
        Copy with non-``None`` overrides applied and re-validated.

        Nested sections take dicts: ``with_overrides(build={"workers": 4})``.
        """
        data = self.model_dump()
        for key, value in overrides.items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **{k: v for k, v in value.items() if v is not None}}
            else:
                data[key] = value
        return CliConfig.model_validate(data)


def _read_config_file(path: Path) -> Dict[str, Any]:
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            return data
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    raise ConfigError(f"{path}: config files must be .toml or .json")


def load_config(path: Union[str, Path, None] = None) -> CliConfig:
    """
    Load a config file (TOML or JSON).

    Args:
        path: Config file; defaults to ``$TEXTMASK_CONFIG`` when unset.

    Returns:
        The validated config, or the defaults when no file is named.

    Raises:
        ConfigError: Unknown suffix or unparsable file.
        pydantic.ValidationError: Invalid values or unknown keys.
        OSError: The file cannot be read.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return CliConfig()
    return CliConfig.model_validate(_read_config_file(Path(path)))

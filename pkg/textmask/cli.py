"""
Command-Line Interface.

    textmask encode   MASK [--labels TABLE] [--format F] [-o OUT] [--packed]
    textmask decode   TEXT [--labels TABLE] [--format F] [-o MAP] [--labels-out TABLE]
    textmask build    ANNOTATIONS OUT [--format F ...] [--workers N]
    textmask validate CORPUS [--format F --labels TABLE]
    textmask eval     PREDICTIONS REFERENCES [--per-sample] [--csv OUT] [-o OUT]
    textmask stats    [CORPUS] [--mask MASK] [--sweep 16,32,64] [--vocab FILE]
    textmask render   TEXT -o PNG [--width W --height H]

Every subcommand accepts ``--config``, ``--json``, ``--lenient``,
``--fail-on-warning`` and ``-v``. Flags override config-file values;
``$TEXTMASK_CONFIG`` names the default config file.

I-SD formats use ``resolution``; B-SD formats use ``canvas_res``.

Exit codes:
    0  success (lenient repairs allowed unless --fail-on-warning)
    2  a file could not be read or written
    3  validation failure (format errors, bad labels, failed self-check)
    4  invalid configuration or flags
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from construct import ConstructError
from pydantic import ValidationError

from .api import SampleFormat, decode_text, encode_mask, encode_records
from .bsd_codec import pack_records, rasterize, unpack_records
from .config import CliConfig, ConfigError, load_config
from .dataset_builder import build_corpus
from .diagnostics import Diagnostic, LabelError, MaskFormatError
from .labels import LabelTable
from .metrics import evaluate, load_eval_pairs
from .raster import LabelGrid, LabelMask, downsample_mask, upsample_grid
from .raster_io import load_binary_mask, load_mask, render_grid, write_label_map
from .response_grammar import BsdExpectation, IsdExpectation, validate_corpus
from .token_stats import (
    ENCODINGS,
    LengthReport,
    compare_encodings,
    count_corpus,
    export_vocabulary,
    resolution_sweep,
    summarize,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_CONFIG = 4

DEFAULT_RENDER_SIZE = 512
GROUP_FIELDS = ("format", "resolution")


class UsageError(Exception):
    """A flag combination the command cannot act on."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ============================================================================
# Argument Types
# ============================================================================

def _positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _int_list(value: str) -> List[int]:
    return [_positive_int(v) for v in value.split(",") if v.strip()]


def _field_list(value: str) -> Tuple[str, ...]:
    fields = tuple(v.strip() for v in value.split(",") if v.strip())
    unknown = [f for f in fields if f not in GROUP_FIELDS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown group field(s): {', '.join(unknown)}")
    return fields


_FORMATS = [f.value for f in SampleFormat]


# ============================================================================
# Shared Helpers
# ============================================================================

def _emit_json(data: Any) -> None:
    print(json.dumps(data, indent=2, ensure_ascii=False))


def _read_text(path: str) -> str:
    """Read a payload file ('-' for stdin), dropping one trailing newline."""
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def _write_text(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text + "\n")
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")


def _format(args: argparse.Namespace, config: CliConfig) -> SampleFormat:
    if args.format:
        return SampleFormat(args.format)
    return SampleFormat(f"isd-{config.encoding.value}")


def _resolution(fmt: SampleFormat, config: CliConfig) -> int:
    return config.resolution if fmt.is_isd else config.canvas_res


def _input_mask(args: argparse.Namespace) -> LabelMask:
    """A labelled mask with ``--labels``, else non-zero pixels as one referent."""
    if args.labels:
        return load_mask(args.mask, LabelTable.load(args.labels))
    bits = load_binary_mask(args.mask)
    return LabelMask(bits.astype(np.int64), LabelTable.from_labels([args.referent]))


def _print_diagnostics(diagnostics: Sequence[Diagnostic]) -> None:
    for d in diagnostics:
        print(str(d), file=sys.stderr)


def _warning_status(found: bool, config: CliConfig) -> int:
    return EXIT_VALIDATION if found and config.fail_on_warning else EXIT_OK


def _decode_input(args: argparse.Namespace, config: CliConfig) -> Tuple[LabelGrid, List[Diagnostic]]:
    fmt = _format(args, config)
    resolution = _resolution(fmt, config)
    if args.packed:
        if fmt.is_isd:
            raise UsageError("--packed applies to bsd formats only")
        records = unpack_records(Path(args.text).read_bytes())
        canvas = records[0].canvas_res if records else resolution
        return rasterize(records, canvas).merged, []

    table = LabelTable.load(args.labels) if args.labels else None
    if fmt.is_isd and table is None:
        raise UsageError(f"decoding {fmt.value} needs --labels")
    grid, diagnostics = decode_text(_read_text(args.text), fmt, resolution, table, config.mode)
    return grid, list(diagnostics)


def _output_size(args: argparse.Namespace, default: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
    if (args.width is None) != (args.height is None):
        raise UsageError("--width and --height go together")
    if args.width is None:
        return default
    return args.width, args.height


# ============================================================================
# Commands
# ============================================================================

def cmd_encode(args: argparse.Namespace, config: CliConfig) -> int:
    fmt = _format(args, config)
    resolution = _resolution(fmt, config)
    mask = _input_mask(args)
    if args.packed:
        if fmt.is_isd:
            raise UsageError("--packed applies to bsd formats only")
        if args.output is None:
            raise UsageError("--packed needs -o/--output")
        Path(args.output).write_bytes(pack_records(encode_records(mask, resolution)))
        return EXIT_OK

    text = encode_mask(mask, fmt, resolution)
    if args.json:
        _emit_json({"format": fmt.value, "resolution": resolution, "text": text})
        if args.output is not None:
            _write_text(args.output, text)
    else:
        _write_text(args.output, text)
    return EXIT_OK


def cmd_decode(args: argparse.Namespace, config: CliConfig) -> int:
    grid, diagnostics = _decode_input(args, config)
    _print_diagnostics(diagnostics)
    if args.output is not None:
        size = _output_size(args, None)
        ids = grid.cells if size is None else upsample_grid(grid, *size).data
        write_label_map(args.output, ids)
    if args.labels_out is not None:
        grid.table.save(args.labels_out)

    if args.json:
        _emit_json({
            "rows": grid.rows,
            "cols": grid.cols,
            "labels": list(grid.table.labels),
            "diagnostics": [d.to_dict() for d in diagnostics],
        })
    else:
        print(f"decoded {grid.rows}x{grid.cols} grid, {len(diagnostics)} diagnostic(s)")
    return _warning_status(bool(diagnostics), config)


def cmd_build(args: argparse.Namespace, config: CliConfig) -> int:
    report = build_corpus(args.annotations, args.out, config)
    if args.json:
        _emit_json(report.to_dict())
    else:
        print(f"built {report.samples} sample(s) from {report.annotations} annotation(s), "
              f"{len(report.skipped)} skipped")
        for line, reason in report.skipped:
            print(f"line {line}: {reason}", file=sys.stderr)
    return _warning_status(bool(report.skipped), config)


def cmd_validate(args: argparse.Namespace, config: CliConfig) -> int:
    expected = None
    if args.format:
        fmt = SampleFormat(args.format)
        resolution = _resolution(fmt, config)
        if fmt.is_isd:
            if not args.labels:
                raise UsageError(f"validating {fmt.value} without meta needs --labels")
            table = LabelTable.load(args.labels)
            expected = IsdExpectation(resolution, resolution, table, fmt.descriptor_kind)
        else:
            expected = BsdExpectation(resolution)

    report = validate_corpus(args.corpus, expected, config.mode, config.response_field,
                             config.build.workers)
    if args.json:
        _emit_json(report.to_dict())
    else:
        for result in report.results:
            for d in result.diagnostics:
                print(f"line {result.line} ({result.sample_id}): {d}")
        print(f"{report.lines} line(s): {len(report.error_lines)} with errors, "
              f"{report.warning_count} warning(s)")
        for rule, count in report.rule_counts.items():
            print(f"  {rule}: {count}")
    if report.exit_status:
        return EXIT_VALIDATION
    return _warning_status(report.warning_count > 0, config)


def cmd_eval(args: argparse.Namespace, config: CliConfig) -> int:
    pairs, semantic = load_eval_pairs(args.predictions, args.references, config.response_field)
    report = evaluate(pairs, per_sample=args.per_sample, semantic_pairs=semantic)
    if args.output is not None:
        report.write_json(args.output, per_sample=args.per_sample)
    if args.csv is not None:
        report.write_csv(args.csv)
    if args.json:
        _emit_json(report.to_dict(per_sample=args.per_sample))
    else:
        for key, value in report.summary().items():
            shown = "n/a" if value is None else (f"{value:.4f}" if isinstance(value, float) else value)
            print(f"{key}: {shown}")
    return EXIT_OK


def _print_lengths(report: LengthReport) -> None:
    print(f"{'group':<24} {'samples':>7} {'mean':>9} {'median':>9} {'min':>6} {'max':>6}")
    for key in sorted(report.groups):
        s = report.groups[key]
        print(f"{key:<24} {s.samples:>7} {s.mean:>9.1f} {s.median:>9.1f} {s.min:>6} {s.max:>6}")
    for key, ratio in sorted(report.ratios.items()):
        print(f"{key}: {ratio:.3f}")


def cmd_stats(args: argparse.Namespace, config: CliConfig) -> int:
    if args.export_vocab is not None:
        count = export_vocabulary(args.export_vocab)
        logger.info("wrote %d vocabulary token(s) to %s", count, args.export_vocab)
        if args.corpus is None and args.mask is None:
            if args.json:
                _emit_json({"vocabulary": str(args.export_vocab), "tokens": count})
            else:
                print(f"wrote {count} token(s) to {args.export_vocab}")
            return EXIT_OK

    if args.corpus is not None and args.mask is not None:
        raise UsageError("give either a corpus or --mask, not both")
    if args.corpus is not None:
        report = count_corpus(args.corpus, config.tokenizer, args.group_by, config.response_field)
    elif args.mask is not None:
        mask = _input_mask(args)
        if args.sweep:
            report = resolution_sweep([mask], args.sweep, config.tokenizer)
        else:
            res = config.resolution
            counts = compare_encodings(downsample_mask(mask, res, res), config.tokenizer)
            report = summarize({f"{name}@{res}": [counts[name]] for name in ENCODINGS if name in counts})
    else:
        raise UsageError("stats needs a corpus, --mask or --export-vocab")

    if args.csv is not None:
        report.write_csv(args.csv)
    if args.json:
        _emit_json(report.to_dict())
    else:
        _print_lengths(report)
        for sample_id, reason in report.failures:
            print(f"{sample_id}: {reason}", file=sys.stderr)
    return _warning_status(bool(report.failures), config)


def cmd_render(args: argparse.Namespace, config: CliConfig) -> int:
    grid, diagnostics = _decode_input(args, config)
    _print_diagnostics(diagnostics)
    width, height = _output_size(args, (DEFAULT_RENDER_SIZE, DEFAULT_RENDER_SIZE))
    render_grid(grid, width, height).save(args.output, format="PNG")
    if args.json:
        _emit_json({"output": str(args.output), "width": width, "height": height,
                    "labels": list(grid.table.labels),
                    "diagnostics": [d.to_dict() for d in diagnostics]})
    return _warning_status(bool(diagnostics), config)


# ============================================================================
# Parser
# ============================================================================

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file (default: $TEXTMASK_CONFIG)")
    common.add_argument("-v", "--verbose", action="store_true", help="Log debug messages to stderr")
    common.add_argument("--json", action="store_true", help="Print a JSON report on stdout")
    common.add_argument("--lenient", action="store_true", help="Repair malformed text and report diagnostics")
    common.add_argument("--fail-on-warning", action="store_true",
                        help="Exit 3 when any diagnostic or skipped item is reported")
    return common


def _geometry_parser() -> argparse.ArgumentParser:
    geometry = argparse.ArgumentParser(add_help=False)
    geometry.add_argument("--resolution", type=_positive_int, help="I-SD grid size R (R x R)")
    geometry.add_argument("--canvas-res", type=_positive_int, help="B-SD canvas size")
    return geometry


def _add_decode_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("text", help="Payload file ('-' for stdin)")
    p.add_argument("--format", choices=_FORMATS, help="Payload format (default: isd-<encoding>)")
    p.add_argument("--labels", help="JSON id -> label table (I-SD)")
    p.add_argument("--packed", action="store_true", help="Input holds packed binary B-SD records")
    p.add_argument("--width", type=_positive_int, help="Output width in pixels")
    p.add_argument("--height", type=_positive_int, help="Output height in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="textmask",
        description="Text codecs, datasets, parsing and metrics for segmentation masks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    common = _common_parser()
    geometry = _geometry_parser()
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("encode", parents=[common, geometry], help="Encode a mask as text")
    p.add_argument("mask", help="PGM or PNG label map")
    p.add_argument("--labels", help="JSON id -> label table (default: binary mask)")
    p.add_argument("--referent", default="target", help="Label of a binary mask's foreground")
    p.add_argument("--format", choices=_FORMATS, help="Output format (default: isd-<encoding>)")
    p.add_argument("-o", "--output", help="Output file (default: stdout)")
    p.add_argument("--packed", action="store_true", help="Write packed binary B-SD records")
    p.set_defaults(handler=cmd_encode)

    p = subparsers.add_parser("decode", parents=[common, geometry], help="Decode text into a label map")
    _add_decode_input(p)
    p.add_argument("-o", "--output", help="PGM or PNG label map to write")
    p.add_argument("--labels-out", help="Write the decoded grid's label table as JSON")
    p.set_defaults(handler=cmd_decode)

    p = subparsers.add_parser("build", parents=[common, geometry], help="Build an instruction corpus")
    p.add_argument("annotations", help="Annotation JSONL file")
    p.add_argument("out", help="Instruction JSONL file to write")
    p.add_argument("--format", dest="formats", action="append", choices=_FORMATS,
                   help="Sample format; repeat for several (default: from config)")
    p.add_argument("--task", dest="tasks", action="append",
                   choices=["semantic", "referring", "generalized_referring", "reasoning"],
                   help="Only build these task families")
    p.add_argument("--workers", type=_positive_int, help="Worker threads")
    p.add_argument("--fail-fast", action="store_true", help="Stop at the first bad annotation")
    p.add_argument("--no-self-check", action="store_true", help="Skip parsing built responses back")
    p.set_defaults(handler=cmd_build)

    p = subparsers.add_parser("validate", parents=[common, geometry], help="Validate responses in a corpus")
    p.add_argument("corpus", help="JSONL corpus")
    p.add_argument("--field", help="Response field (default: last gpt turn)")
    p.add_argument("--format", choices=_FORMATS, help="Expected format (default: each line's meta)")
    p.add_argument("--labels", help="JSON id -> label table for --format isd-*")
    p.add_argument("--workers", type=_positive_int, help="Worker threads")
    p.set_defaults(handler=cmd_validate)

    p = subparsers.add_parser("eval", parents=[common], help="Score predictions against references")
    p.add_argument("predictions", help="Prediction JSONL (id + response)")
    p.add_argument("references", help="Reference instruction corpus")
    p.add_argument("--field", help="Response field (default: last gpt turn)")
    p.add_argument("--per-sample", action="store_true", help="Include per-sample scores")
    p.add_argument("--csv", help="Write the summary as CSV")
    p.add_argument("-o", "--output", help="Write the JSON report")
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("stats", parents=[common, geometry], help="Token-length statistics")
    p.add_argument("corpus", nargs="?", help="Instruction JSONL corpus")
    p.add_argument("--field", help="Response field (default: last gpt turn)")
    p.add_argument("--mask", help="Count one mask in every encoding instead of a corpus")
    p.add_argument("--labels", help="JSON id -> label table for --mask")
    p.add_argument("--referent", default="target", help="Label of a binary --mask's foreground")
    p.add_argument("--sweep", type=_int_list, help="Comma-separated resolutions for --mask")
    p.add_argument("--vocab", help="Count with a newline-delimited vocabulary file")
    p.add_argument("--group-by", type=_field_list, default=GROUP_FIELDS,
                   help="Comma-separated grouping fields: format,resolution")
    p.add_argument("--export-vocab", help="Write the brick and marker tokens to this file")
    p.add_argument("--csv", help="Write per-group statistics as CSV")
    p.set_defaults(handler=cmd_stats)

    p = subparsers.add_parser("render", parents=[common, geometry], help="Render decoded text as a PNG")
    _add_decode_input(p)
    p.add_argument("-o", "--output", required=True, help="PNG file to write")
    p.set_defaults(handler=cmd_render)

    return parser


# ============================================================================
# Entry Point
# ============================================================================

def _configure(args: argparse.Namespace) -> CliConfig:
    config = load_config(args.config)
    build: Dict[str, Any] = {
        "formats": getattr(args, "formats", None),
        "tasks": getattr(args, "tasks", None),
        "workers": getattr(args, "workers", None),
        "fail_fast": True if getattr(args, "fail_fast", False) else None,
        "self_check": False if getattr(args, "no_self_check", False) else None,
    }
    vocab = getattr(args, "vocab", None)
    return config.with_overrides(
        resolution=getattr(args, "resolution", None),
        canvas_res=getattr(args, "canvas_res", None),
        lenient=True if args.lenient else None,
        fail_on_warning=True if args.fail_on_warning else None,
        response_field=getattr(args, "field", None),
        tokenizer=None if vocab is None else {"kind": "vocab_file", "path": vocab},
        build=build,
    )


def _fail(code: int, error: BaseException) -> int:
    print(f"error: {error}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        config = _configure(args)
    except OSError as e:
        return _fail(EXIT_IO, e)
    except (ValidationError, ConfigError) as e:
        return _fail(EXIT_CONFIG, e)

    handler: Callable[[argparse.Namespace, CliConfig], int] = args.handler
    try:
        return handler(args, config)
    except UsageError as e:
        return _fail(EXIT_CONFIG, e)
    except OSError as e:
        return _fail(EXIT_IO, e)
    except (MaskFormatError, LabelError, ValueError, ConstructError) as e:
        return _fail(EXIT_VALIDATION, e)


if __name__ == "__main__":
    sys.exit(main())

"""
Unit tests for the instruction dataset builder.
"""

import json

import numpy as np
import pytest

from textmask import (
    Annotation, BsdExpectation, CliConfig, IsdExpectation, LabelTable,
    build_bsd_sample, build_corpus, build_isd_sample, parse_response,
    validate_corpus, write_label_map,
)
from textmask.dataset_builder import SelfCheckError, bsd_ground_truth, isd_ground_truth


QUESTION = "Which animals could be pets?"


@pytest.fixture
def scene(tmp_path):
    """A 64x64 scene: sky over sand, plus two dog instances."""
    semantic = np.ones((64, 64), dtype=np.int64)
    semantic[32:] = 2
    write_label_map(tmp_path / "semantic.pgm", semantic)
    LabelTable.from_labels(["sky", "sand", "dog"]).save(tmp_path / "labels.json")

    left = np.zeros((64, 64), dtype=np.uint8)
    left[8:24, 4:20] = 1
    right = np.zeros((64, 64), dtype=np.uint8)
    right[40:56, 36:60] = 1
    write_label_map(tmp_path / "left.pgm", left)
    write_label_map(tmp_path / "right.pgm", right)
    return tmp_path


def semantic_ann():
    return Annotation(id="sem", image="beach.jpg", task="semantic",
                      mask="semantic.pgm", labels="labels.json")


def referring_ann(referents=("left dog", "right dog"), task="referring"):
    return Annotation(id="ref", image="park.jpg", task=task,
                      instance_masks=["left.pgm", "right.pgm"], referents=list(referents))


def reasoning_ann():
    return Annotation(id="why", image="park.jpg", task="reasoning",
                      instance_masks=["left.pgm", "right.pgm"], question=QUESTION)


def no_target_ann():
    return Annotation(id="none", image="park.jpg", task="generalized_referring",
                      referents=["unicorn"], no_target=True)


# ============================================================================
# Annotations
# ============================================================================

@pytest.mark.parametrize("data", [
    {"task": "referring", "instance_masks": ["a.pgm"]},
    {"task": "reasoning", "instance_masks": ["a.pgm"]},
    {"task": "semantic", "mask": "m.pgm"},
    {"task": "referring", "referents": ["x"]},
    {"task": "referring", "referents": ["x"], "no_target": True, "instance_masks": ["a.pgm"]},
    {"task": "referring", "referents": ["x", "y", "z"], "instance_masks": ["a.pgm", "b.pgm"]},
])
def test_annotation_validation(data):
    """Task-specific fields are required and consistent."""
    with pytest.raises(ValueError):
        Annotation(id="a", image="i.jpg", **data)


def test_instance_names():
    """One referent can cover all instances; reasoning uses roiN."""
    assert referring_ann(["dogs"], "generalized_referring").instance_names() == ["dogs", "dogs"]
    assert reasoning_ann().instance_names() == ["roi0", "roi1"]
    assert no_target_ann().instance_names() == ["unicorn"]


# ============================================================================
# I-SD Samples
# ============================================================================

def test_semantic_isd_sample(scene):
    """Every class is a label; the payload has one line per row."""
    sample = build_isd_sample(semantic_ann(), 16, base_dir=scene)

    payload = sample.response.split("<seg>")[1].split("</seg>")[0]
    assert sample.response.startswith("The result is: \n<seg>")
    assert payload.split("\n") == ["sky*16"] * 8 + ["sand*16"] * 8
    assert sample.meta.labels == ["sky", "sand", "dog"]
    assert sample.query == "<image>\nCan you segment the sky, sand, dog in the image?"


def test_referring_isd_sample(scene):
    """Instances paint their referents into the grid."""
    sample = build_isd_sample(referring_ann(), 16, encoding="irle", base_dir=scene)

    table = LabelTable.from_labels(sample.meta.labels)
    parsed = parse_response(sample.response, IsdExpectation(16, 16, table))
    cells = parsed.grid.cells
    assert sample.meta.format.value == "isd-irle"
    assert (cells[2:6, 1:5] == 1).all()
    assert (cells[10:14, 9:15] == 2).all()
    assert int((cells > 0).sum()) == 16 + 24


def test_shared_referent_isd_sample(scene):
    """A single referent labels every instance."""
    grid = isd_ground_truth(referring_ann(["dogs"], "generalized_referring"), 16, scene)

    assert grid.table.labels == ("others", "dogs")
    assert int((grid.cells == 1).sum()) == 40


def test_reasoning_isd_sample(scene):
    """Reasoning queries carry the question and roiN labels."""
    sample = build_isd_sample(reasoning_ann(), 16, base_dir=scene)

    assert sample.meta.labels == ["roi0", "roi1"]
    assert QUESTION in sample.query


def test_no_target_isd_sample(scene):
    """No-target payloads are all background runs."""
    sample = build_isd_sample(no_target_ann(), 16, base_dir=scene)

    assert sample.response.endswith("<seg>" + "\n".join(["others*16"] * 16) + "</seg>")
    assert "unicorn" in sample.query


def test_missing_mask_file(scene):
    """Unreadable masks surface as I/O errors."""
    ann = Annotation(id="x", image="i.jpg", task="referring",
                     instance_masks=["absent.pgm"], referents=["ghost"])

    with pytest.raises(OSError):
        build_isd_sample(ann, 16, base_dir=scene)


def test_self_check_error_rule():
    """Self-check failures name their rule."""
    assert SelfCheckError("x", rule="self-check").rule == "self-check"


# ============================================================================
# B-SD Samples
# ============================================================================

def test_referring_bsd_sample_records_in_order(scene):
    """Two instances -> two records in annotation order."""
    sample = build_bsd_sample(referring_ann(), 64, base_dir=scene)

    parsed = parse_response(sample.response, BsdExpectation(64))
    assert [r.referent for r in parsed.records] == ["left dog", "right dog"]
    assert [r.box.as_tuple() for r in parsed.records] == [(4, 8, 19, 23), (36, 40, 59, 55)]
    assert sample.meta.format.value == "bsd"
    assert sample.meta.labels == []


def test_semantic_bsd_sample_includes_absent_classes(scene):
    """Classes missing from the mask become no-target records."""
    records = bsd_ground_truth(semantic_ann(), 64, scene)

    assert [r.referent for r in records] == ["sky", "sand", "dog"]
    assert records[0].box.as_tuple() == (0, 0, 63, 31)
    assert records[2].box is None


def test_no_target_bsd_sample(scene):
    """No-target records have empty box and seg."""
    sample = build_bsd_sample(no_target_ann(), base_dir=scene)

    assert sample.response == "The result is: \n<ref>unicorn</ref><box>[[]]</box><seg></seg>"


def test_bsd_without_bricks(scene):
    """bsd-nobricks samples carry binary RRLE in-box payloads."""
    sample = build_bsd_sample(referring_ann(), 64, use_bricks=False, base_dir=scene)

    assert "fg*16" in sample.response
    assert sample.meta.format.value == "bsd-nobricks"


# ============================================================================
# Corpus
# ============================================================================

def write_annotations(path, annotations):
    path.write_text("".join(a + "\n" for a in annotations), encoding="utf-8")


def test_build_corpus_mixed_formats(scene):
    """Each annotation yields one sample per format, ids suffixed by format."""
    write_annotations(scene / "ann.jsonl", [
        semantic_ann().model_dump_json(), referring_ann().model_dump_json(),
        reasoning_ann().model_dump_json(), no_target_ann().model_dump_json(),
    ])
    config = CliConfig.model_validate({"build": {"formats": ["isd-rrle", "bsd"]}})

    report = build_corpus(scene / "ann.jsonl", scene / "out.jsonl", config)

    lines = [json.loads(x) for x in (scene / "out.jsonl").read_text(encoding="utf-8").splitlines()]
    assert report.samples == len(lines) == 8
    assert report.by_format == {"isd-rrle": 4, "bsd": 4}
    assert report.by_task["semantic"] == 1
    assert lines[0]["id"] == "sem#isd-rrle"
    assert lines[0]["conversations"][0]["from"] == "human"
    assert validate_corpus(scene / "out.jsonl").exit_status == 0


def test_build_corpus_empty_input(tmp_path):
    """An empty annotation file builds an empty corpus."""
    (tmp_path / "ann.jsonl").write_text("", encoding="utf-8")

    report = build_corpus(tmp_path / "ann.jsonl", tmp_path / "out.jsonl")

    assert report.to_dict() == {"annotations": 0, "samples": 0, "skipped": [],
                                "by_task": {}, "by_format": {}}
    assert (tmp_path / "out.jsonl").read_text(encoding="utf-8") == ""


def test_build_corpus_skips_bad_lines(scene):
    """Bad lines are skipped and reported; fail_fast raises instead."""
    missing = Annotation(id="x", image="i.jpg", task="referring",
                         instance_masks=["absent.pgm"], referents=["ghost"])
    write_annotations(scene / "ann.jsonl", [
        referring_ann().model_dump_json(), '{"id": "bad"}', missing.model_dump_json(),
    ])

    report = build_corpus(scene / "ann.jsonl", scene / "out.jsonl")

    assert report.samples == 1
    assert [line for line, _ in report.skipped] == [2, 3]
    with pytest.raises(ValueError):
        build_corpus(scene / "ann.jsonl", scene / "out.jsonl",
                     CliConfig().with_overrides(build={"fail_fast": True}))


def test_build_corpus_task_filter(scene):
    """Only the selected task families are built."""
    write_annotations(scene / "ann.jsonl", [
        semantic_ann().model_dump_json(), referring_ann().model_dump_json(),
    ])
    config = CliConfig().with_overrides(build={"tasks": ["referring"]})

    report = build_corpus(scene / "ann.jsonl", scene / "out.jsonl", config)

    assert report.by_task == {"referring": 1}


def test_synthetic_corpus_self_consistency(tmp_path, rng, make_blob):
    """1000 synthetic annotations build, validate and rebuild byte-identically."""
    annotations = []
    for i in range(1000):
        write_label_map(tmp_path / f"m{i}.pgm", make_blob(rng, 64).astype(np.uint8))
        annotations.append(json.dumps({
            "id": f"s{i}", "image": f"img{i}.jpg", "task": "referring",
            "instance_masks": [f"m{i}.pgm"], "referents": [f"object {i % 7}"],
        }))
    write_annotations(tmp_path / "ann.jsonl", annotations)
    config = CliConfig.model_validate({"build": {"formats": ["isd-rrle", "bsd"], "workers": 4}})

    report = build_corpus(tmp_path / "ann.jsonl", tmp_path / "a.jsonl", config)
    build_corpus(tmp_path / "ann.jsonl", tmp_path / "b.jsonl", config.with_overrides(build={"workers": 1}))

    assert report.samples == 2000 and report.skipped == []
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert validate_corpus(tmp_path / "a.jsonl").error_lines == []

import json

import numpy as np
import pytest

from milcount.annotations import (
    AnnotationError,
    CellAnnotation,
    SlideRecord,
    canonical_json,
    count_to_class,
    dataset_stats,
    load_dataset,
    merge_annotations,
    parse_dataset,
    serialize_dataset,
)

TRI = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0))


def make_slide(slide_id, counts):
    return SlideRecord(
        slide_id=slide_id,
        image_path=slide_id + ".png",
        cells=tuple(CellAnnotation(polygon=TRI, droplet_count=c) for c in counts),
    )


def make_entry(slide_id, counts):
    return {
        "slide_id": slide_id,
        "image": slide_id + ".png",
        "cells": [{"polygon": [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], "droplets": c} for c in counts],
    }


class TestCountToClass:
    @pytest.mark.parametrize("count,cls", [(0, 1), (1, 2), (12, 13), (13, 14), (15, 14), (100, 14)])
    def test_boundary_examples(self, count, cls):
        assert count_to_class(count) == cls

    def test_negative_rejected(self):
        with pytest.raises(AnnotationError):
            count_to_class(-1)

    def test_total_monotone_surjective(self):
        classes = [count_to_class(n) for n in range(100)]
        assert all(1 <= c <= 14 for c in classes)
        assert all(a <= b for a, b in zip(classes, classes[1:]))
        assert set(classes) == set(range(1, 15))


class TestParse:
    def test_empty_document(self):
        assert parse_dataset([]) == []

    def test_label_derivation(self):
        records = parse_dataset([make_entry("s1", [0, 5, 20])])
        label = records[0].label
        expected = np.zeros(14, dtype=int)
        expected[[0, 5, 13]] = 1
        assert np.array_equal(label, expected)
        assert label.sum() == len(records[0].cells)

    def test_roundtrip_byte_identity(self):
        doc = [make_entry("s1", [0, 3]), make_entry("s2", [7])]
        text = canonical_json(doc)
        records = parse_dataset(json.loads(text))
        assert serialize_dataset(records) == text
        assert serialize_dataset(parse_dataset(json.loads(serialize_dataset(records)))) == text

    def test_sum_label_equals_cells(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            counts = rng.integers(0, 30, size=rng.integers(0, 12)).tolist()
            rec = parse_dataset([make_entry("s", counts)])[0]
            assert rec.label.sum() == len(counts)

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda e: e.pop("slide_id"),
            lambda e: e.pop("cells"),
            lambda e: e["cells"][0].pop("droplets"),
            lambda e: e["cells"][0].__setitem__("polygon", [[0, 0], [1, 1]]),
            lambda e: e["cells"][0].__setitem__("droplets", -2),
        ],
    )
    def test_malformed_entries(self, mutate):
        entry = make_entry("bad", [1])
        mutate(entry)
        with pytest.raises(AnnotationError, match="bad|entry 0"):
            parse_dataset([entry])

    def test_duplicate_slide_id(self):
        with pytest.raises(AnnotationError, match="duplicate"):
            parse_dataset([make_entry("s1", [0]), make_entry("s1", [1])])

    def test_invalid_json_file(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("[{")
        with pytest.raises(AnnotationError, match="invalid JSON"):
            load_dataset(p)

    def test_polygon_minimum(self):
        with pytest.raises(AnnotationError):
            CellAnnotation(polygon=((0, 0), (1, 1)), droplet_count=0)


class TestMerge:
    def test_concatenation_order(self):
        a = [make_slide("a%d" % i, [i]) for i in range(2)]
        b = [make_slide("b%d" % i, [i]) for i in range(3)]
        merged = merge_annotations([a, b])
        assert len(merged) == 5
        assert merged[0].slide_id == "a0"
        assert [r.slide_id for r in merged] == ["a0", "a1", "b0", "b1", "b2"]

    def test_single_file_identity(self):
        a = [make_slide("a", [1, 2])]
        assert merge_annotations([a]) == a

    def test_quadrupled_dataset(self):
        base = [make_slide("img%03d" % i, [i % 15]) for i in range(80)]
        augmented = [
            [make_slide(r.slide_id + suf, [c.droplet_count for c in r.cells]) for r in base]
            for suf in ("_b12", "_b08", "_blur3")
        ]
        merged = merge_annotations([base] + augmented)
        assert len(merged) == 320

    def test_collision_listed(self):
        a = [make_slide("x", [0])]
        with pytest.raises(AnnotationError, match="x"):
            merge_annotations([a, a])

    def test_empty_input(self):
        with pytest.raises(AnnotationError):
            merge_annotations([])

    def test_associative_and_stats_additive(self):
        a = [make_slide("a", [0, 0])]
        b = [make_slide("b", [0, 25, 25, 25, 25])]
        c = [make_slide("c", [3])]
        left = merge_annotations([merge_annotations([a, b]), c])
        right = merge_annotations([a, merge_annotations([b, c])])
        assert [r.slide_id for r in left] == [r.slide_id for r in right]
        sa, _ = dataset_stats(a)
        sb, _ = dataset_stats(b)
        sab, _ = dataset_stats(merge_annotations([a, b]))
        assert np.array_equal(sab, sa + sb)


class TestStats:
    def test_empty(self):
        stats, total = dataset_stats([])
        assert np.array_equal(stats, np.zeros(14, dtype=int))
        assert total == 0

    def test_hand_summation(self):
        s1 = make_slide("s1", [0, 0])
        s2 = make_slide("s2", [0, 25, 25, 25, 25])
        stats, total = dataset_stats([s1, s2])
        assert stats[0] == 3
        assert stats[13] == 4
        assert total == 7

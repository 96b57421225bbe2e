"""Annotation data model: per-cell polygons with droplet counts, slide records
with derived 14-bin count labels, JSON parsing/merging, and dataset statistics.

Canonical annotation JSON is a top-level array of
``{"slide_id": str, "image": str, "cells": [{"polygon": [[x, y], ...],
"droplets": int}]}``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

NUM_CLASSES = 14


class AnnotationError(ValueError):
    """Malformed annotation document or inconsistent records."""


def count_to_class(droplet_count):
    """Map a raw droplet count to its class id in [1, 14].

    0 droplets -> class 1, 1 droplet -> class 2, ... 12 droplets -> class 13;
    anything above 12 collapses into class 14.
    """
    n = int(droplet_count)
    if n < 0:
        raise AnnotationError("droplet count must be non-negative, got %d" % n)
    return n + 1 if n <= 12 else NUM_CLASSES


def count_vector(class_counts):
    """14-bin integer label vector; bin k holds the count for class k+1."""
    v = np.asarray(class_counts, dtype=np.int64)
    if v.shape != (NUM_CLASSES,):
        raise AnnotationError("count vector must have exactly %d bins" % NUM_CLASSES)
    if (v < 0).any():
        raise AnnotationError("count vector bins must be non-negative")
    return v


@dataclass(frozen=True)
class CellAnnotation:
    polygon: tuple  # ((x, y), ...) pixel coordinates, >= 3 vertices
    droplet_count: int
    class_id: int = field(default=None)

    def __post_init__(self):
        if len(self.polygon) < 3:
            raise AnnotationError("polygon needs >= 3 vertices, got %d" % len(self.polygon))
        derived = count_to_class(self.droplet_count)
        if self.class_id is None:
            object.__setattr__(self, "class_id", derived)
        elif self.class_id != derived:
            raise AnnotationError(
                "class_id %d inconsistent with droplet count %d" % (self.class_id, self.droplet_count)
            )


@dataclass(frozen=True, eq=False)
class SlideRecord:
    slide_id: str
    image_path: str
    cells: tuple  # tuple of CellAnnotation
    label: np.ndarray = field(default=None)  # derived 14-bin CountVector

    def __eq__(self, other):
        # label is derived from cells, and ndarray equality is elementwise.
        return (
            isinstance(other, SlideRecord)
            and self.slide_id == other.slide_id
            and self.image_path == other.image_path
            and self.cells == other.cells
        )

    def __post_init__(self):
        derived = np.zeros(NUM_CLASSES, dtype=np.int64)
        for c in self.cells:
            derived[c.class_id - 1] += 1
        if self.label is None:
            object.__setattr__(self, "label", derived)
        elif not np.array_equal(count_vector(self.label), derived):
            raise AnnotationError("label inconsistent with cell annotations for %r" % self.slide_id)


def _entry_to_record(entry, index):
    where = "entry %d" % index
    if not isinstance(entry, dict):
        raise AnnotationError("%s: expected an object" % where)
    for key in ("slide_id", "image", "cells"):
        if key not in entry:
            raise AnnotationError("%s: missing field %r" % (where, key))
    slide_id = entry["slide_id"]
    where = "entry %d (%r)" % (index, slide_id)
    cells = []
    for j, c in enumerate(entry["cells"]):
        if "polygon" not in c or "droplets" not in c:
            raise AnnotationError("%s cell %d: missing polygon or droplets" % (where, j))
        poly = tuple((float(x), float(y)) for x, y in c["polygon"])
        if len(poly) < 3:
            raise AnnotationError("%s cell %d: polygon has %d points" % (where, j, len(poly)))
        try:
            cells.append(CellAnnotation(polygon=poly, droplet_count=int(c["droplets"])))
        except AnnotationError as e:
            raise AnnotationError("%s cell %d: %s" % (where, j, e))
    return SlideRecord(slide_id=slide_id, image_path=entry["image"], cells=tuple(cells))


def parse_dataset(document):
    """Parse a canonical annotation document (already-decoded JSON list)
    into SlideRecords.  Duplicate slide_ids are an error."""
    if not isinstance(document, list):
        raise AnnotationError("annotation document must be a top-level array")
    records = [_entry_to_record(e, i) for i, e in enumerate(document)]
    seen = {}
    for r in records:
        if r.slide_id in seen:
            raise AnnotationError("duplicate slide_id %r" % r.slide_id)
        seen[r.slide_id] = r
    return records


def record_to_entry(record):
    return {
        "slide_id": record.slide_id,
        "image": record.image_path,
        "cells": [
            {"polygon": [[x, y] for x, y in c.polygon], "droplets": c.droplet_count}
            for c in record.cells
        ],
    }


def serialize_dataset(records):
    """Canonical serialization: fixed key order, 2-space indent, trailing
    newline.  parse -> serialize -> parse is the identity."""
    doc = [record_to_entry(r) for r in records]
    return canonical_json(doc)


def canonical_json(document):
    return json.dumps(document, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def load_dataset(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise AnnotationError("%s: invalid JSON: %s" % (path, e))
    try:
        return parse_dataset(doc)
    except AnnotationError as e:
        raise AnnotationError("%s: %s" % (path, e))


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_dataset(records))


def merge_annotations(record_lists):
    """Concatenate parsed annotation files in input order.

    Duplicate slide_ids across inputs are an error listing every collision.
    """
    if not record_lists:
        raise AnnotationError("merge needs at least one annotation file")
    merged = [r for lst in record_lists for r in lst]
    seen = set()
    collisions = []
    for r in merged:
        if r.slide_id in seen:
            collisions.append(r.slide_id)
        seen.add(r.slide_id)
    if collisions:
        raise AnnotationError("duplicate slide_ids after merge: %s" % ", ".join(sorted(set(collisions))))
    return merged


def dataset_stats(records):
    """Per-class cell totals and the grand total over a list of slides."""
    stats = np.zeros(NUM_CLASSES, dtype=np.int64)
    for r in records:
        stats += r.label
    return stats, int(stats.sum())

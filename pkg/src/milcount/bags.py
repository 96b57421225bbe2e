"""Bags of patch-level instance features.

Each slide image is tiled into non-overlapping 512x512 patches (edge-replicated
padding), and each patch becomes one instance row.  Features come either from
per-slide embedding files (the "MILF" binary format, standing in for a frozen
CNN backbone) or from a simple blob featurizer that thresholds and counts
bright connected components.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotations import NUM_CLASSES, count_to_class

PATCH_SIZE = 512
BLOB_FEATURE_DIM = 6

MILF_MAGIC = b"MILF"
MILF_VERSION = 1


class ShapeError(ValueError):
    """Feature matrix does not match the expected bag geometry."""


@dataclass(frozen=True)
class Bag:
    slide_id: str
    features: np.ndarray  # N x F, float64
    label: np.ndarray  # 14-bin CountVector


@dataclass(frozen=True)
class FeatureSource:
    mode: str  # "embedding_file" | "blob_featurizer"
    feature_dim: int = BLOB_FEATURE_DIM
    emb_dir: str = None
    threshold: int = 200
    ref_area: float = 80.0

    def __post_init__(self):
        if self.mode not in ("embedding_file", "blob_featurizer"):
            raise ValueError("unknown feature source mode %r" % self.mode)
        if self.mode == "embedding_file" and self.emb_dir is None:
            raise ValueError("embedding_file mode needs emb_dir")


def write_embeddings(path, features):
    """Write an N x F float32 matrix in the MILF binary format."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ShapeError("embeddings must be a 2-D matrix")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MILF_MAGIC)
        fh.write(struct.pack("<III", MILF_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_embeddings(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MILF_MAGIC:
            raise ShapeError("%s: bad magic %r" % (path, magic))
        version, n, f = struct.unpack("<III", fh.read(12))
        if version != MILF_VERSION:
            raise ShapeError("%s: unsupported version %d" % (path, version))
        data = np.frombuffer(fh.read(n * f * 4), dtype="<f4")
        if data.size != n * f:
            raise ShapeError("%s: truncated payload" % path)
    return data.reshape(n, f).astype(np.float64)


def patch_grid(width, height, patch=PATCH_SIZE):
    return (height + patch - 1) // patch, (width + patch - 1) // patch


def tile_patches(img, patch=PATCH_SIZE):
    """Tile an image into patch x patch blocks, row-major.

    The image is padded to multiples of `patch` by edge replication, so the
    patch count is always ceil(W/patch) * ceil(H/patch).
    """
    a = np.asarray(img)
    h, w = a.shape[:2]
    rows, cols = patch_grid(w, h, patch)
    pad = [(0, rows * patch - h), (0, cols * patch - w)] + [(0, 0)] * (a.ndim - 2)
    p = np.pad(a, pad, mode="edge")
    return [
        p[r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
        for r in range(rows)
        for c in range(cols)
    ]


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def blob_featurize(patch, threshold=200, ref_area=80.0):
    """6-dim feature vector from thresholded bright blobs in a patch.

    Components (8-connected) with area < 0.25 * ref_area are discarded; each
    kept component contributes max(1, round(area / ref_area)) to the estimated
    droplet count, mirroring the droplet-size-equivalence annotation rule.
    """
    if ref_area < 1:
        raise ValueError("ref_area must be >= 1")
    a = np.asarray(patch, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=2)
    mask = a >= threshold
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    count = 0
    kept = 0
    fg_area = 0
    if n:
        areas = ndimage.sum_labels(np.ones_like(a), labels, index=np.arange(1, n + 1))
        for area in areas:
            if area < 0.25 * ref_area:
                continue
            kept += 1
            fg_area += area
            count += max(1, int(np.floor(area / ref_area + 0.5)))
    fg_mean = float(a[mask].mean()) if mask.any() else 0.0
    return np.array(
        [
            float(count),
            float(kept),
            fg_area / a.size,
            fg_mean / 255.0,
            float(a.max()) / 255.0,
            float(a.mean()) / 255.0,
        ]
    )


def assemble_bag(slide, source, image_root=".", image=None):
    """Build the Bag for one slide: one feature row per patch, tiling order."""
    if source.mode == "embedding_file":
        path = os.path.join(source.emb_dir, slide.slide_id + ".milf")
        if not os.path.isfile(path):
            raise FileNotFoundError("missing embedding file: %s" % path)
        feats = read_embeddings(path)
        if image is None:
            from .augment import load_image

            image = load_image(os.path.join(image_root, slide.image_path))
        expected = int(np.prod(patch_grid(image.shape[1], image.shape[0])))
        if feats.shape[0] != expected:
            raise ShapeError(
                "%s: embedding rows %d != patch count %d" % (path, feats.shape[0], expected)
            )
    else:
        if image is None:
            from .augment import load_image

            image = load_image(os.path.join(image_root, slide.image_path))
        feats = np.stack(
            [blob_featurize(p, source.threshold, source.ref_area) for p in tile_patches(image)]
        )
    return Bag(slide_id=slide.slide_id, features=feats, label=slide.label.copy())


def baseline_aggregate(patch_counts):
    """Bag-level baseline features: 14-bin histogram of per-patch estimated
    counts (binned via count_to_class), log1p-compressed."""
    h = np.zeros(NUM_CLASSES, dtype=np.float64)
    for c in patch_counts:
        if c < 0:
            raise ValueError("patch counts must be non-negative")
        h[count_to_class(int(round(c))) - 1] += 1
    return np.log1p(h)


def pooled_embeddings(features):
    """Alternate baseline input for embedding bags: concat(mean, max) rows."""
    f = np.asarray(features, dtype=np.float64)
    return np.concatenate([f.mean(axis=0), f.max(axis=0)])

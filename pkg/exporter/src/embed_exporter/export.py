"""Batch export: one MILF embedding file per slide image.

Per-image failures are recorded and the batch continues; callers decide the
exit code from the returned results.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .backbone import embed_patches, load_backbone
from .milf import write_embeddings
from .tiling import PATCH_SIZE, tile_patches

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ExportJob:
    images: tuple  # image file paths
    out_dir: str
    backbone: str = "resnet50"
    weights: str = "pretrained"
    device: str = "cpu"
    patch_size: int = PATCH_SIZE
    batch_size: int = 8
    seed: int = 0


@dataclass
class ExportResult:
    written: list = field(default_factory=list)  # (slide_id, path, n_patches)
    failed: list = field(default_factory=list)  # (path, error message)


def list_images(directory):
    names = sorted(os.listdir(directory))
    return [
        os.path.join(directory, n)
        for n in names
        if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS
    ]


def load_image(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def export(job):
    """Run the job; returns an ExportResult listing written files and failures."""
    os.makedirs(job.out_dir, exist_ok=True)
    model, _ = load_backbone(job.backbone, job.weights, job.device, job.seed)
    result = ExportResult()
    for path in job.images:
        slide_id = os.path.splitext(os.path.basename(path))[0]
        try:
            img = load_image(path)
            patches = tile_patches(img, job.patch_size)
            feats = embed_patches(model, patches, job.device, job.batch_size)
            out_path = os.path.join(job.out_dir, slide_id + ".milf")
            write_embeddings(out_path, feats)
            result.written.append((slide_id, out_path, len(patches)))
        except Exception as e:  # per-file isolation: keep the batch going
            result.failed.append((path, str(e)))
    return result

"""Deterministic image augmentation: brightness scaling and 3x3 Gaussian blur,
with annotation propagation and suffixed file naming.

Both augmentations are geometry- and count-preserving, so cell annotations are
copied verbatim onto the augmented slides.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .annotations import SlideRecord


@dataclass(frozen=True)
class AugmentSpec:
    kind: str  # "brightness" | "blur"
    suffix: str
    factor: float = None  # brightness only
    kernel_size: int = 3  # blur only

    def __post_init__(self):
        if self.kind not in ("brightness", "blur"):
            raise ValueError("unknown augmentation kind %r" % self.kind)
        if self.kind == "brightness" and not (self.factor and self.factor > 0):
            raise ValueError("brightness needs a positive factor")
        if self.kind == "blur" and self.kernel_size != 3:
            raise ValueError("only kernel size 3 is supported")


# The three augmentations used to quadruple a dataset.
STANDARD_SPECS = {
    "b12": AugmentSpec(kind="brightness", suffix="_b12", factor=1.2),
    "b08": AugmentSpec(kind="brightness", suffix="_b08", factor=0.8),
    "blur3": AugmentSpec(kind="blur", suffix="_blur3"),
}

KNOWN_SUFFIXES = ("_b12", "_b08", "_blur3")


def adjust_brightness(img, factor):
    """Scale 8-bit intensities by `factor`, rounding half away from zero and
    clamping to [0, 255]."""
    if factor <= 0:
        raise ValueError("brightness factor must be positive, got %r" % factor)
    a = np.asarray(img, dtype=np.float64)
    out = np.floor(a * factor + 0.5)  # inputs are non-negative
    return np.clip(out, 0, 255).astype(np.uint8)


def gaussian_blur3(img):
    """3x3 binomial blur: separable [1,2,1]/4 along each axis, reflect-101
    borders, one round (half away from zero) after the full 2-D convolution."""
    a = np.asarray(img, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    p = np.pad(a, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    h = (p[:, :-2, :] + 2.0 * p[:, 1:-1, :] + p[:, 2:, :]) / 4.0
    v = (h[:-2, :, :] + 2.0 * h[1:-1, :, :] + h[2:, :, :]) / 4.0
    out = np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)
    return out[:, :, 0] if squeeze else out


def apply_spec(img, spec):
    if spec.kind == "brightness":
        return adjust_brightness(img, spec.factor)
    return gaussian_blur3(img)


def _suffixed_path(image_path, suffix):
    root, _ = os.path.splitext(image_path)
    return root + suffix + ".png"  # lossless output regardless of source format


def load_image(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def save_image(img, path):
    Image.fromarray(img).save(path, format="PNG")


def augment_slide(slide, spec):
    """Augmented copy of a SlideRecord: id and filename suffixed, cells kept."""
    return SlideRecord(
        slide_id=slide.slide_id + spec.suffix,
        image_path=_suffixed_path(slide.image_path, spec.suffix),
        cells=slide.cells,
    )


def augment_dataset(slides, specs, image_root, out_root):
    """Write augmented images for every (slide, spec) pair and return the
    per-spec augmented record lists, in spec order then slide order."""
    os.makedirs(out_root, exist_ok=True)
    per_spec = []
    for spec in specs:
        records = []
        for slide in slides:
            src = os.path.join(image_root, slide.image_path)
            if not os.path.isfile(src):
                raise FileNotFoundError("missing image file: %s" % src)
            img = load_image(src)
            aug = augment_slide(slide, spec)
            save_image(apply_spec(img, spec), os.path.join(out_root, aug.image_path))
            records.append(aug)
        per_spec.append(records)
    return per_spec


def strip_suffix(slide_id):
    """Source slide_id for an augmented id (identity for originals)."""
    for suf in KNOWN_SUFFIXES:
        if slide_id.endswith(suf):
            return slide_id[: -len(suf)]
    return slide_id

"""512x512 tiling identical to the training pipeline's contract: row-major
order, edge-replication padding, ceil(W/512) * ceil(H/512) patches."""

import numpy as np

PATCH_SIZE = 512


def patch_grid(width, height, patch=PATCH_SIZE):
    return (height + patch - 1) // patch, (width + patch - 1) // patch


def tile_patches(img, patch=PATCH_SIZE):
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

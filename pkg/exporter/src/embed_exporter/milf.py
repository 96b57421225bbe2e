"""MILF embedding file writer.

Layout (little endian): magic b"MILF", u32 version = 1, u32 N, u32 F, then
N*F float32 values row-major.  Writes go to a temp file first and are renamed
into place so readers never observe a partial file.
"""

import os
import struct

import numpy as np

MILF_MAGIC = b"MILF"
MILF_VERSION = 1


def write_embeddings(path, features):
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("embeddings must be a 2-D matrix")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MILF_MAGIC)
        fh.write(struct.pack("<III", MILF_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())
    os.replace(tmp, path)

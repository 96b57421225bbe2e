"""Named, seeded random streams.

All randomness in the toolkit flows through `stream(seed, name, *indices)`.
Stream names are part of the CLI contract: "init", "dropout", "shuffle",
"split", "synthgen".  Extra integer indices (epoch, slide index, ...) derive
independent sub-streams so parallel work stays deterministic.
"""

import hashlib

import numpy as np

STREAM_NAMES = ("init", "dropout", "shuffle", "split", "synthgen")


def stream(seed, name, *indices):
    """Return a numpy Generator for the given (seed, stream name, indices)."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    entropy = [int(seed), tag] + [int(i) for i in indices]
    return np.random.default_rng(np.random.SeedSequence(entropy))

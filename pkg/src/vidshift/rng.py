"""Seeded random streams on a counter-based generator.

Every random draw in the package comes from a Philox-4x64-10 stream
(numpy's ``np.random.Philox``), keyed by a user seed plus a label path.
Philox is a pure counter-based generator: the stream for a given
(seed, labels) pair is a fixed function of its 128-bit key, so streams
are independent of creation order and reproducible across processes.

The key derivation is part of the on-disk reproducibility contract:

    key[0] = seed  (as unsigned 64-bit)
    key[1] = first 8 bytes, little-endian, of SHA-256 of the label path,
             where the path is the labels joined with '/' after str().

Example: ``stream(7, "noise", 3)`` hashes ``b"noise/3"``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(labels: tuple) -> int:
    path = "/".join(str(l) for l in labels).encode("utf-8")
    digest = hashlib.sha256(path).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for (seed, labels).

    The same arguments always produce the same stream; distinct label
    paths give statistically independent streams under the same seed.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(_label_key(labels))])
    return np.random.Generator(np.random.Philox(key=key))

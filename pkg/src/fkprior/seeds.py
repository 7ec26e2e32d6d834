"""Deterministic, labelled random streams.

One user-facing seed fans out into independent substreams keyed by a string
label, so the training stream, the sampling stream, and the noise stream
never interleave. Identical (seed, label) pairs always reproduce the same
sequence regardless of call order elsewhere in the program.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed, label):
    """Generator for substream ``label`` of ``seed``."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    spawn_key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key))
    )

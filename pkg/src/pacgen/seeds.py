"""Deterministic derivation of named random streams from a master seed.

Every random draw in the toolkit flows from one 64-bit master seed through
labeled substreams (one per environment, per synthetic dataset, per
training run), so independent stages never share a stream and any stage
can be re-derived in isolation.
"""

import hashlib

import numpy as np

# Recorded in artifacts; bump if the derivation below ever changes.
STREAM_SCHEME = "pacgen-streams-v1"

_SEP = "\x1f"


def derive_seed(master_seed, *path):
    """Derive the 64-bit seed of the substream identified by ``path``.

    The path is a sequence of labels (strings or integers), e.g.
    ``derive_seed(seed, "REAL", 3)`` for the stream that samples the
    fourth real environment. Distinct paths give independent streams.
    """
    if not isinstance(master_seed, (int, np.integer)):
        raise ValueError(f"master seed must be an integer, got {type(master_seed).__name__}")
    if not 0 <= master_seed < 2 ** 64:
        raise ValueError(f"master seed must fit in 64 unsigned bits, got {master_seed}")
    if not path:
        raise ValueError("substream path must have at least one label")
    text = _SEP.join([STREAM_SCHEME, str(int(master_seed))] + [str(p) for p in path])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed, *path):
    """Generator seeded for the named substream."""
    return np.random.default_rng(derive_seed(master_seed, *path))

"""Deterministic random-number streams.

All stochastic operations draw from Philox 4x64, a counter-based generator
whose bit stream is fixed by its key, so runs reproduce bit-for-bit across
processes and platforms.  Streams are derived from a user seed plus a tuple
of integer stream ids::

    stream(seed, GENERATE, example_index)

which keys a ``numpy.random.SeedSequence`` with the ids as its spawn key.
Distinct id tuples give statistically independent streams; the same tuple
always gives the same stream.

Per-example prediction streams are derived from the example content (see
``content_stream_id``) rather than its position, so predictions are invariant
to dataset order and to the presence of other examples.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Top-level stream ids, one per stochastic subsystem.
GENERATE = 1
BALANCE = 2
SPLIT = 3
PERTURB = 4
INIT = 5
SHUFFLE = 6
TRAIN_NOISE = 7
PREDICT = 8
KL_SAMPLE = 9


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Derive an independent Philox generator for (seed, ids)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))


def content_stream_id(features: np.ndarray) -> int:
    """Stable 63-bit stream id computed from an example's feature bytes.

    SHA-256 of the C-contiguous float64 buffer, truncated to 63 bits.  Two
    examples with identical features share a stream, which keeps predictions
    permutation-invariant.
    """
    buf = np.ascontiguousarray(features, dtype=np.float64)
    digest = hashlib.sha256(buf.tobytes()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)

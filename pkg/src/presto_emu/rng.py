"""Counter-based random streams keyed by (seed, repetition, tick).

Every stochastic draw in a run comes from a Philox generator whose key is
derived from the run seed and a purpose label, and whose counter encodes the
repetition and the timeline position. Draws therefore do not depend on the
order in which repetitions are executed or on how they are batched.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Repetitions are grouped in fixed blocks for vectorized noise generation.
# This constant is part of the stream definition: changing it changes results.
REP_BLOCK = 256
NOISE_BLOCK = 128  # samples per noise block


def _key(seed: int, purpose: str) -> int:
    h = hashlib.sha256(f"{int(seed) & (2**64 - 1)}:{purpose}".encode()).digest()
    return int.from_bytes(h[:16], "little")


def generator(seed: int, purpose: str, *counter: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, counter...)`` (up to 3 ints)."""
    if len(counter) > 3:
        raise ValueError("at most three counter fields")
    words = [0] + [int(c) & (2**64 - 1) for c in counter] + [0] * (3 - len(counter))
    return np.random.Generator(np.random.Philox(key=_key(seed, purpose), counter=words))


def rep_uniform(seed: int, purpose: str, reps: np.ndarray, tick: int, size: int = 1) -> np.ndarray:
    """``size`` uniforms per repetition in ``reps`` keyed at ``tick``.

    Returns shape ``(len(reps), size)``.
    """
    reps = np.asarray(reps, dtype=np.int64)
    out = np.empty((reps.size, size))
    blocks = reps // REP_BLOCK
    for b in np.unique(blocks):
        g = generator(seed, purpose, int(b), int(tick))
        table = g.random((REP_BLOCK, size))
        sel = blocks == b
        out[sel] = table[reps[sel] % REP_BLOCK]
    return out


def rep_normal_samples(seed: int, purpose: str, reps: np.ndarray, n0: int, n1: int) -> np.ndarray:
    """Complex standard-normal samples (unit variance per quadrature) for the
    sample range ``[n0, n1)`` of every repetition in ``reps``.

    Noise for sample ``n`` of repetition ``r`` is fixed by ``(seed, r, n)``.
    """
    reps = np.asarray(reps, dtype=np.int64)
    out = np.empty((reps.size, n1 - n0), dtype=np.complex128)
    if n1 <= n0:
        return out
    rblocks = reps // REP_BLOCK
    first, last = n0 // NOISE_BLOCK, (n1 - 1) // NOISE_BLOCK
    a = n0 - first * NOISE_BLOCK
    for b in np.unique(rblocks):
        sel = np.nonzero(rblocks == b)[0]
        rows = reps[sel] % REP_BLOCK
        # (I, Q) pairs are adjacent, so the float block views as complex
        parts = [generator(seed, purpose, int(b), sb).standard_normal((REP_BLOCK, NOISE_BLOCK, 2))
                 .view(np.complex128)[..., 0] for sb in range(first, last + 1)]
        block = np.concatenate(parts, axis=1)[:, a:a + n1 - n0]
        if sel.size == REP_BLOCK and sel[-1] - sel[0] == REP_BLOCK - 1 and np.all(np.diff(rows) == 1):
            out[sel[0]:sel[-1] + 1] = block
        else:
            out[sel] = block[rows]
    return out

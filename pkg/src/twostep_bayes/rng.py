"""Counter-based random number streams.

Every stochastic routine in the package draws from a numpy Generator backed
by the Philox counter-based bit generator.  Streams are derived from a user
seed plus a tuple of labels (run / chain / purpose / cell indices), so any
sub-computation can be re-run in isolation and parallel workers never share
a stream.  Label hashing uses SHA-256, so stream identity is stable across
platforms and Python versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "substream_key", "spawn", "derive_seed"]


def substream_key(seed: int, *labels) -> tuple[int, int]:
    """Derive a 128-bit Philox key from ``seed`` and arbitrary labels.

    Labels may be ints, floats, strings, or nested tuples; they are rendered
    into an unambiguous byte string (type-tagged, length-prefixed) before
    hashing so ("ab", 1) and ("a", "b1") cannot collide.
    """
    h = hashlib.sha256()
    h.update(b"tsb-stream-v1")
    h.update(int(seed).to_bytes(16, "little", signed=True))
    _feed(h, labels)
    d = h.digest()
    return tuple(int.from_bytes(d[8 * i : 8 * (i + 1)], "little") for i in range(2))


def _feed(h, obj) -> None:
    if isinstance(obj, (tuple, list)):
        h.update(b"T%d:" % len(obj))
        for x in obj:
            _feed(h, x)
    elif isinstance(obj, str):
        b = obj.encode("utf-8")
        h.update(b"S%d:" % len(b))
        h.update(b)
    elif isinstance(obj, (bool, np.bool_)):
        h.update(b"B1:" if obj else b"B0:")
    elif isinstance(obj, (int, np.integer)):
        h.update(b"I:")
        h.update(int(obj).to_bytes(16, "little", signed=True))
    elif isinstance(obj, (float, np.floating)):
        h.update(b"F:")
        h.update(np.float64(obj).tobytes())
    else:
        raise TypeError(f"unhashable stream label: {obj!r}")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return an independent Generator for (seed, labels)."""
    key = substream_key(seed, *labels)
    return np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))


def spawn(seed: int, n: int, *labels) -> list[np.random.Generator]:
    """n sibling streams, one per index under the given label prefix."""
    return [stream(seed, *labels, i) for i in range(n)]


def derive_seed(seed: int, *labels) -> int:
    """Collapse (seed, labels) to a nonnegative 63-bit integer seed.

    Used where an API wants a plain integer (per-cell data seeds); the value
    is the low half of the substream key, so it inherits the same stability.
    """
    return substream_key(seed, *labels)[0] & ((1 << 63) - 1)

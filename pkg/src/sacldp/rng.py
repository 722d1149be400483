"""Labelled, counter-based random streams.

Every stream is a Philox generator keyed by a master seed plus a tuple of
labels (component name, sample index, ...), so parallel samples never share
or overlap streams and any single sample can be regenerated in isolation.
"""

import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(master_seed, *labels):
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_label_key(l) for l in labels))


def generator(master_seed, *labels):
    """Return an independent ``numpy.random.Generator`` for ``(master_seed, *labels)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *labels)))


def derive_seed(master_seed, *labels):
    """Derive a 63-bit integer seed for a labelled sub-stream."""
    hi, lo = seed_sequence(master_seed, *labels).generate_state(2, dtype=np.uint32)
    return int((int(hi) << 31) ^ int(lo))

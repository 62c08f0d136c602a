"""Seeded, splittable random streams.

Every consumer asks for a generator by ``(seed, name)``.  The name is hashed
with CRC32 and mixed into a :class:`numpy.random.SeedSequence`, which feeds a
Philox counter-based bit generator.  Streams with different names are
statistically independent, so point classes can be generated in any order
(or concurrently) without changing the output.

Documented stream names:

* ``"surface"``   - face selection and barycentric draws
* ``"near"``      - near-surface Gaussian offsets
* ``"uniform"``   - uniform points in [-1, 1]^3
* ``"grid"``      - feature volume initialisation
* ``"net"``       - perceptron weight initialisation
* ``"batch"``     - mini-batch shuffling
* ``"noise/<i>"`` - test-time noise injection for sweep row ``i``
"""

import zlib

import numpy as np


def stream_id(name):
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed, name="default"):
    """Return an independent generator for ``(seed, name)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed), stream_id(name)])
    return np.random.Generator(np.random.Philox(ss))

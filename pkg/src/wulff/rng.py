"""Deterministic, splittable random streams for the simulation chains."""

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


class RngStream:
    """Counter-based stream keyed by (seed, stream_id).

    Identical keys produce bit-identical draws on every platform, so every
    experiment is reproducible from its config.  Distinct stream ids are
    statistically independent, which lets chains run in parallel without
    any coordination.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        )

    def spawn(self, stream_id):
        """Fresh independent stream with the same seed."""
        return RngStream(self.seed, stream_id)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def signs(self, size=None):
        """Fair +-1 draws."""
        return 2 * self._gen.integers(0, 2, size=size).astype(np.int8) - 1

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

"""Seedable random streams that replay identically across platforms.

Algorithm (pinned): MT19937 via :class:`random.Random`, seeded with the
string ``"<seed>/<stream>"`` (seed version 2 hashes it with SHA-512).
Normal variates use the inverse CDF of :class:`statistics.NormalDist`
applied to one uniform draw.  Unlike Box-Muller this never touches
``cos``/``sin``, and for ``|z| < 1.44`` the inverse CDF is pure polynomial
arithmetic, so results depend on libm only in the far tails.
"""

from __future__ import annotations

import random
from statistics import NormalDist

_STD_NORMAL = NormalDist()


class PortableRng:
    def __init__(self, seed: int, stream: str = "main") -> None:
        self.seed = seed
        self.stream = stream
        self._r = random.Random(f"{seed}/{stream}")

    def random(self) -> float:
        return self._r.random()

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u = self._r.random()
        while u == 0.0:
            u = self._r.random()
        return mu + sigma * _STD_NORMAL.inv_cdf(u)

    def truncated_normal(self, lo: float, hi: float) -> float:
        """Standard normal conditioned on ``lo <= z <= hi`` (rejection)."""
        while True:
            z = self.normal()
            if lo <= z <= hi:
                return z

    def bernoulli(self, p: float) -> bool:
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self._r.random() < p

    def randbytes(self, n: int) -> bytes:
        return bytes(self._r.getrandbits(8) for _ in range(n))

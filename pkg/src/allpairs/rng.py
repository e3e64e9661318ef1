"""Counter-based deterministic random streams.

Every random decision in this package flows through :class:`Stream`, a
splitmix64 generator addressed by (key, counter). Keys are folded from
arbitrary integer/string parts, so a stream for sample `(seed, index)` can
be opened at any time, on any worker, in any order, and will always produce
the same draws. There is no global RNG state anywhere.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

ALGORITHM = "splitmix64-counter"


def mix64(x: int) -> int:
    """splitmix64 finalizer: a 64-bit avalanche of x."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return x ^ (x >> 31)


def fold_key(*parts: int | str) -> int:
    """Fold key parts into a single 64-bit stream key (order-sensitive)."""
    k = 0x6A09E667F3BCC909  # sqrt(2) fractional bits, arbitrary fixed start
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                k = mix64((k + _GOLDEN) ^ b)
        else:
            k = mix64((k + _GOLDEN) ^ (int(part) & MASK64))
    return k


class Stream:
    """A random-access random stream keyed by `fold_key(*parts)`.

    Draw n is `mix64(key + (n+1)*golden)`, i.e. plain splitmix64 seeded with
    the key, so sequential use and the vectorized block methods agree bit
    for bit.
    """

    __slots__ = ("key", "counter")

    def __init__(self, *parts: int | str, key: int | None = None):
        self.key = fold_key(*parts) if key is None else key & MASK64
        self.counter = 0

    def substream(self, *parts: int | str) -> "Stream":
        """Derive an independent child stream (does not consume draws)."""
        return Stream(key=fold_key(self.key, *parts))

    def u64(self) -> int:
        self.counter += 1
        return mix64((self.key + self.counter * _GOLDEN) & MASK64)

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.u64() >> 11) * (2.0**-53)

    def randint(self, n: int) -> int:
        """Integer in [0, n). Modulo reduction; bias is < n/2**64."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return self.u64() % n

    def bernoulli(self, p: float = 0.5) -> bool:
        return self.uniform() < p

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    # Vectorized block draws (consume counter exactly like the scalar path).

    def u64_block(self, n: int) -> np.ndarray:
        counters = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        x = (np.uint64(self.key) + counters * np.uint64(_GOLDEN))
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
        return x ^ (x >> np.uint64(31))

    def uniform_block(self, n: int) -> np.ndarray:
        return (self.u64_block(n) >> np.uint64(11)) * (2.0**-53)

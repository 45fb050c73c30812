"""Deterministic random streams built on the SplitMix64 generator.

All randomness in the engine flows through this module so that results are
bit-exact across platforms and independent of execution order:

- a stream is identified by a 64-bit key derived from integer parts
  (e.g. ``derive_key(seed, request_index)``);
- the i-th draw of a stream is a pure function of (key, i), i.e. the
  generator is counter-based and never shares mutable state.

SplitMix64 is the splittable generator underlying Java's SplittableRandom;
only integer arithmetic is used, so every platform produces identical bits.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # 2^64 / golden ratio, the SplitMix64 stream increment
_KEY_INIT = 0x243F6A8885A308D3  # pi fraction, arbitrary non-zero fold seed


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a 64-bit bijective avalanche mix."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts (seed, request index, ...) into one stream key.

    Order matters; negative parts are mapped into the 64-bit ring first.
    """
    key = _KEY_INIT
    for part in parts:
        key = mix64((key + _GOLDEN) ^ mix64(part & _MASK64))
    return key


class Stream:
    """Sequential view over a counter-based SplitMix64 stream.

    ``Stream(key).u64_at(i)`` is the same value for everyone, always; the
    sequential helpers just keep the counter for you.
    """

    __slots__ = ("key", "_counter")

    def __init__(self, key: int):
        self.key = key & _MASK64
        self._counter = 0

    def u64_at(self, i: int) -> int:
        return mix64((self.key + (i + 1) * _GOLDEN) & _MASK64)

    def next_u64(self) -> int:
        value = self.u64_at(self._counter)
        self._counter += 1
        return value

    def next_uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def next_int(self, low: int, high: int) -> int:
        """Uniform integer in the inclusive range [low, high], no modulo bias."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = high - low + 1
        # Rejection sampling keeps the draw exactly uniform.
        bound = ((1 << 64) // span) * span
        while True:
            value = self.next_u64()
            if value < bound:
                return low + value % span

    def fork(self, *parts: int) -> "Stream":
        """Child stream keyed on this stream plus extra parts."""
        return Stream(derive_key(self.key, *parts))


def uniform_at(key: int, step: int) -> float:
    """Counter-style access: the uniform double drawn at ``step`` of stream ``key``."""
    return (mix64((key + (step + 1) * _GOLDEN) & _MASK64) >> 11) * (2.0 ** -53)

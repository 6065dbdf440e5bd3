"""Counter-based deterministic random numbers.

Augmentation and split shuffling must be reproducible under any parallel
schedule and reimplementable bit-exactly in other languages, so instead of
a stateful generator we use a stateless splitmix64 finalizer keyed by
(seed, stream) and indexed by a draw counter.  All arithmetic is 64-bit
wrapping; uniforms take the top 53 bits, which map to identical IEEE-754
doubles in any conforming runtime.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective scramble of a 64-bit word."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """Collapse (seed, stream) into one 64-bit key.

    Two mixing rounds keep distinct (seed, stream) pairs decorrelated even
    for small consecutive integers, which is what callers pass.
    """
    return mix64(mix64(seed & _MASK64) ^ ((stream & _MASK64) * _GOLDEN & _MASK64))


def raw64(seed: int, stream: int, counter: int) -> int:
    """The counter-th 64-bit word of stream (seed, stream)."""
    return mix64((stream_key(seed, stream) + (counter & _MASK64) * _GOLDEN) & _MASK64)


def uniform(seed: int, stream: int, counter: int, lo: float = 0.0, hi: float = 1.0) -> float:
    """Uniform double in [lo, hi) from the counter-th draw of a stream."""
    u = (raw64(seed, stream, counter) >> 11) * 2.0**-53
    return lo + u * (hi - lo)


def shuffled(items: list, seed: int, stream: int) -> list:
    """Fisher-Yates shuffle driven by the counter stream; input untouched."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = raw64(seed, stream, i) % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out

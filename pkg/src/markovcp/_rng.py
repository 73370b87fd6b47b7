"""Counter-based random streams shared by the compiled and pure-Python kernels.

Every random quantity used while scoring a candidate is a pure function of
``(seed, stream, counter)``.  This makes per-candidate substreams trivial,
keeps parallel evaluation identical to serial evaluation, and lets the two
kernel backends reproduce each other bit for bit.

The mixing function is the SplitMix64 finalizer.
"""

from .errors import InvalidInputError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """Key of substream ``stream`` under master ``seed``."""
    return mix64(mix64(seed + GOLDEN) ^ ((stream * STREAM_MULT) & MASK64))


def draw(key: int, counter: int) -> int:
    """The ``counter``-th raw 64-bit output of a substream."""
    return mix64(key + (counter + 1) * GOLDEN)


def uniform_open(z: int) -> float:
    """Map a raw output to a double in the open interval (0, 1)."""
    return ((z >> 12) + 0.5) * (1.0 / 4503599627370496.0)


def bounded(z: int, bound: int) -> int:
    """Map a raw output to an integer in ``[0, bound)`` (multiply-high)."""
    return (z * bound) >> 64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed

"""i-block decomposition of a state sequence and its block permutations.

A sequence ending in state ``i`` splits into an optional head (everything
before the first ``i``), permutable blocks that each start with ``i`` and
contain no other ``i``, and a tail holding the final ``i``.  Reordering the
permutable blocks preserves the first state, the last state and every
pairwise transition count, so all reorderings are equally likely under any
Markov chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from math import factorial
from typing import Sequence

import numpy as np

from . import _rng
from .errors import InvalidInputError

# Above this many blocks D! no longer fits in 64 bits and permutations are
# drawn by shuffling instead of by rank.
MAX_RANKED_BLOCKS = 20


@dataclass(frozen=True)
class IBlockDecomposition:
    anchor: int
    head: tuple[int, ...] | None
    blocks: tuple[tuple[int, ...], ...]
    tail: tuple[int, ...]

    @property
    def D(self) -> int:
        return len(self.blocks)

    def sequence(self) -> np.ndarray:
        parts = ([self.head] if self.head else []) + list(self.blocks) + [self.tail]
        return np.array([x for part in parts for x in part], dtype=np.int64)


@dataclass(frozen=True)
class BlockPermutation:
    """Block order ``(rho(1), ..., rho(D))`` using 1-based block indices."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise InvalidInputError(f"not a permutation of 1..{len(self.order)}: {self.order}")

    @classmethod
    def identity(cls, D: int) -> "BlockPermutation":
        return cls(tuple(range(1, D + 1)))


def decompose(seq: Sequence[int], i: int) -> IBlockDecomposition:
    """Split ``seq`` (which must end in ``i``) into head, i-blocks and tail."""
    s = [int(x) for x in seq]
    if not s or s[-1] != i:
        raise InvalidInputError(f"sequence must end in the anchor state {i}")
    occ = [t for t, x in enumerate(s) if x == i]
    head = tuple(s[: occ[0]]) or None
    blocks = tuple(tuple(s[a:b]) for a, b in zip(occ[:-1], occ[1:]))
    return IBlockDecomposition(anchor=i, head=head, blocks=blocks, tail=(i,))


def apply_permutation(dec: IBlockDecomposition, perm: BlockPermutation) -> np.ndarray:
    """Reassemble head, blocks in ``perm`` order, and tail."""
    if len(perm.order) != dec.D:
        raise InvalidInputError(
            f"permutation has dimension {len(perm.order)} but there are {dec.D} blocks"
        )
    parts = [dec.head] if dec.head else []
    parts += [dec.blocks[k - 1] for k in perm.order]
    parts.append(dec.tail)
    return np.array([x for part in parts for x in part], dtype=np.int64)


def unrank_permutation(rank: int, D: int) -> tuple[int, ...]:
    """The ``rank``-th permutation of ``0..D-1`` in lexicographic order."""
    avail = list(range(D))
    out = []
    for k in range(D):
        f = factorial(D - 1 - k)
        idx, rank = divmod(rank, f)
        out.append(avail.pop(idx))
    return tuple(out)


def _shuffle(key: int, base: int, D: int) -> tuple[int, ...]:
    # Fisher-Yates filling positions from the end; the scoring kernel replays
    # the first few steps of this exact shuffle.
    perm = list(range(D))
    for r in range(D - 1):
        pos = D - 1 - r
        j = _rng.bounded(_rng.draw(key, base + r), pos + 1)
        perm[pos], perm[j] = perm[j], perm[pos]
    return tuple(perm)


def sample_permutations(
    dec: IBlockDecomposition, max_n: int, seed: int, stream: int = 0
) -> list[BlockPermutation]:
    """Permutations of the i-blocks to test against.

    Returns all ``D!`` permutations when ``D! <= max_n``.  Otherwise returns
    the identity followed by ``max_n - 1`` distinct non-identity permutations
    drawn uniformly without replacement.  Keeping the identity in the sample
    guarantees that the observed ordering is always counted, so the p-value
    of the observed sequence is never zero.  The draw is a function of
    ``(seed, stream)`` only; the conformal scorer uses the candidate's
    lexicographic index as ``stream`` and reproduces this exact sample.
    """
    if max_n < 1:
        raise InvalidInputError("max_n must be >= 1")
    seed = _rng.check_seed(seed)
    D = dec.D
    key = _rng.stream_key(seed, stream)
    identity = tuple(range(D))
    if D <= MAX_RANKED_BLOCKS:
        total = factorial(D)
        if total <= max_n:
            orders = list(permutations(range(D)))
        else:
            chosen = set()
            n = max_n - 1
            for s, j in enumerate(range(total - 1 - n, total - 1)):
                t = _rng.bounded(_rng.draw(key, 1 + s), j + 1)
                chosen.add(j if t in chosen else t)
            orders = [identity] + [unrank_permutation(r + 1, D) for r in sorted(chosen)]
    else:
        seen = {identity}
        orders = [identity]
        p = 0
        while len(orders) < max_n:
            order = _shuffle(key, 1 + p * D, D)
            p += 1
            if order not in seen:
                seen.add(order)
                orders.append(order)
    return [BlockPermutation(tuple(k + 1 for k in o)) for o in orders]

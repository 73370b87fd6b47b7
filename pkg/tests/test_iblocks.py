from math import factorial

import numpy as np
import pytest

from markovcp.errors import InvalidInputError
from markovcp.iblocks import (
    BlockPermutation,
    apply_permutation,
    decompose,
    sample_permutations,
    unrank_permutation,
)

EX1 = (1, 2, 4, 1, 2, 3, 4, 1)
EX2 = (1, 2, 4, 1, 2, 3, 4, 2)


def test_decompose_anchor_at_start():
    dec = decompose(EX1, 1)
    assert dec.head is None
    assert dec.blocks == ((1, 2, 4), (1, 2, 3, 4))
    assert dec.tail == (1,)
    assert dec.D == 2


def test_decompose_with_head():
    dec = decompose(EX2, 2)
    assert dec.head == (1,)
    assert dec.blocks == ((2, 4, 1), (2, 3, 4))
    assert dec.tail == (2,)
    assert dec.D == 2


def test_decompose_constant_sequence():
    dec = decompose((1, 1, 1), 1)
    assert dec.head is None and dec.blocks == ((1,), (1,)) and dec.tail == (1,)
    assert decompose([3] * 50, 3).D == 49


def test_decompose_requires_anchor_at_end():
    with pytest.raises(InvalidInputError):
        decompose((1, 2, 3), 1)
    with pytest.raises(InvalidInputError):
        decompose((), 1)


def test_single_occurrence_gives_no_blocks():
    dec = decompose((2, 3, 1), 1)
    assert dec.D == 0 and dec.head == (2, 3)
    assert apply_permutation(dec, BlockPermutation(())).tolist() == [2, 3, 1]


def test_apply_swaps():
    assert apply_permutation(decompose(EX1, 1), BlockPermutation((2, 1))).tolist() == [1, 2, 3, 4, 1, 2, 4, 1]
    assert apply_permutation(decompose(EX2, 2), BlockPermutation((2, 1))).tolist() == [1, 2, 3, 4, 2, 4, 1, 2]


def test_apply_identity_round_trip():
    for seq, i in ((EX1, 1), (EX2, 2)):
        dec = decompose(seq, i)
        assert apply_permutation(dec, BlockPermutation.identity(dec.D)).tolist() == list(seq)
        assert dec.sequence().tolist() == list(seq)


def test_apply_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        apply_permutation(decompose(EX1, 1), BlockPermutation((1, 2, 3)))


def test_block_permutation_validates():
    with pytest.raises(InvalidInputError):
        BlockPermutation((1, 1))
    with pytest.raises(InvalidInputError):
        BlockPermutation((0, 1))


def test_unrank_is_lexicographic():
    from itertools import permutations

    assert [unrank_permutation(r, 4) for r in range(24)] == list(permutations(range(4)))


def test_sample_full_enumeration():
    dec = decompose(EX1, 1)
    assert [p.order for p in sample_permutations(dec, 10, 0)] == [(1, 2), (2, 1)]
    dec1 = decompose((1, 2, 1), 1)
    assert [p.order for p in sample_permutations(dec1, 7, 3)] == [(1,)]


def _seq_with_blocks(D, rng):
    parts = []
    for _ in range(D):
        parts += [1] + list(rng.integers(2, 5, size=rng.integers(0, 3)))
    return parts + [1]


def test_sample_distinct_and_reproducible():
    rng = np.random.default_rng(0)
    dec = decompose(_seq_with_blocks(10, rng), 1)
    a = sample_permutations(dec, 100, 7)
    b = sample_permutations(dec, 100, 7)
    assert len(a) == 100
    assert len({p.order for p in a}) == 100
    assert [p.order for p in a] == [p.order for p in b]
    c = sample_permutations(dec, 100, 8)
    assert [p.order for p in a] != [p.order for p in c]


def test_sample_shuffle_regime_distinct():
    dec = decompose([1] * 30, 1)
    perms = sample_permutations(dec, 200, 1)
    assert len({p.order for p in perms}) == 200
    assert all(sorted(p.order) == list(range(1, 30)) for p in perms)


def test_sampled_ranks_are_uniform():
    # D = 4: 24 permutations, sample 12 per seed
    dec = decompose([1, 2, 1, 3, 1, 4, 1, 2, 3, 1], 1)
    assert factorial(dec.D) == 24
    hits = np.zeros(24)
    n_seeds = 2000
    from itertools import permutations

    index = {tuple(k + 1 for k in p): r for r, p in enumerate(permutations(range(4)))}
    for seed in range(n_seeds):
        for p in sample_permutations(dec, 12, seed):
            hits[index[p.order]] += 1
    # the identity is always kept; the 11 others are spread over 23 ranks
    assert hits[0] == n_seeds
    q = 11 / 23
    se = np.sqrt(q * (1 - q) / n_seeds)
    assert np.all(np.abs(hits[1:] / n_seeds - q) < 4.5 * se)


def test_sample_rejects_nonpositive():
    with pytest.raises(InvalidInputError):
        sample_permutations(decompose(EX1, 1), 0, 0)

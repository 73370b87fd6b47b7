"""Property-based checks of the invariants the predictors rely on."""

import math
from itertools import combinations, permutations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from markovcp.conformal import ConformalConfig, score_all_candidates
from markovcp.evalsim import ExperimentGrid, run_simulation_study
from markovcp.iblocks import BlockPermutation, apply_permutation, decompose
from markovcp.likelihood import (
    hdr_set,
    keep_probability,
    randomized_hdr_set,
    rank_candidates_from_matrix,
)
from markovcp.markov import StateSpace, TransitionMatrix, sequence_log_probability, transition_counts

PROFILE = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def anchored_sequences(draw, max_blocks=6, m=4):
    """A sequence over 1..m ending in its anchor, with at most ``max_blocks`` i-blocks."""
    anchor = draw(st.integers(1, m))
    others = [s for s in range(1, m + 1) if s != anchor]
    head = draw(st.lists(st.sampled_from(others), max_size=3))
    n_blocks = draw(st.integers(0, max_blocks))
    seq = list(head)
    for _ in range(n_blocks):
        seq += [anchor] + draw(st.lists(st.sampled_from(others), max_size=3))
    return seq + [anchor], anchor


@st.composite
def stochastic_matrices(draw, m=4, positive=False):
    rows = []
    for _ in range(m):
        w = draw(st.lists(st.integers(1 if positive else 0, 20), min_size=m, max_size=m).filter(lambda r: sum(r) > 0))
        rows.append(np.array(w, dtype=float) / sum(w))
    return TransitionMatrix(np.array(rows))


@PROFILE
@given(anchored_sequences())
def test_block_permutations_preserve_counts_and_ends(case):
    seq, anchor = case
    dec = decompose(seq, anchor)
    counts = transition_counts(np.array(seq), 4)
    for order in permutations(range(1, dec.D + 1)):
        out = apply_permutation(dec, BlockPermutation(order))
        assert len(out) == len(seq)
        assert out[0] == seq[0] and out[-1] == seq[-1]
        np.testing.assert_array_equal(transition_counts(out, 4), counts)


@PROFILE
@given(anchored_sequences(max_blocks=5), stochastic_matrices(positive=True))
def test_block_permutations_preserve_path_probability(case, P):
    seq, anchor = case
    dec = decompose(seq, anchor)
    ref = sequence_log_probability(seq[1:], seq[0], P) if len(seq) > 1 else 0.0
    for order in permutations(range(1, dec.D + 1)):
        out = apply_permutation(dec, BlockPermutation(order)).tolist()
        got = sequence_log_probability(out[1:], out[0], P) if len(out) > 1 else 0.0
        assert abs(got - ref) < 1e-9


@PROFILE
@given(st.lists(st.integers(1, 4), min_size=1, max_size=40))
def test_decompose_round_trip_and_blocks(seq):
    dec = decompose(seq, seq[-1])
    assert dec.sequence().tolist() == seq
    assert all(b[0] == dec.anchor and dec.anchor not in b[1:] for b in dec.blocks)
    assert (dec.head is None) == (seq[0] == dec.anchor)
    assert dec.D == seq.count(seq[-1]) - 1


def _brute_min_size(masses, target):
    for k in range(1, len(masses) + 1):
        if any(sum(c) >= target - 1e-12 for c in combinations(masses, k)):
            return k
    return None


@PROFILE
@given(stochastic_matrices(m=2), st.integers(1, 4), st.integers(1, 2), st.floats(0.01, 0.99), st.integers(0, 100))
def test_hdr_minimal_by_subset_search(P, horizon, last, alpha, seed):
    r = rank_candidates_from_matrix(P, last, horizon, seed)
    s = hdr_set(r, alpha)
    assert not s.mass_deficit
    assert s.attained_mass >= 1 - alpha - 1e-12
    assert s.K == _brute_min_size(list(r.masses), 1 - alpha)


@PROFILE
@given(stochastic_matrices(m=4), st.integers(1, 4), st.integers(1, 4), st.floats(0.001, 0.999), st.integers(0, 100))
def test_hdr_minimal_by_sorted_masses(P, horizon, last, alpha, seed):
    r = rank_candidates_from_matrix(P, last, horizon, seed)
    s = hdr_set(r, alpha)
    largest = np.sort(r.masses)[::-1]
    assert largest[: s.K].sum() >= 1 - alpha - 1e-12
    assert s.K == 1 or largest[: s.K - 1].sum() < 1 - alpha - 1e-12
    assert abs(r.masses.sum() - 1) < 1e-9


@pytest.mark.parametrize("alpha", [0.05, 0.2, 0.5, 0.73])
def test_randomized_hdr_expected_mass(chain, alpha):
    P, _ = chain
    r = rank_candidates_from_matrix(P, 2, 3, 0)
    u = np.random.default_rng(1).random(100_000)
    masses = np.array([randomized_hdr_set(r, alpha, x).attained_mass for x in u[:2000]])
    # closed form for the full sample: keep with probability p
    K = hdr_set(r, alpha).K
    before = r.cumulative[K - 2] if K > 1 else 0.0
    full = np.where(u <= keep_probability(r, alpha), r.cumulative[K - 1], before)
    np.testing.assert_array_equal(masses, full[:2000])
    se = full.std() / math.sqrt(full.size)
    assert abs(full.mean() - (1 - alpha)) < 3 * se + 1e-12
    assert (before + keep_probability(r, alpha) * r.masses[K - 1]) == pytest.approx(1 - alpha, abs=1e-12)


def test_tie_order_fair():
    P = TransitionMatrix(np.full((4, 4), 0.25))
    firsts = np.array([rank_candidates_from_matrix(P, 1, 1, seed).sequences[0, 0] for seed in range(10_000)])
    counts = np.bincount(firsts - 1, minlength=4)
    assert chisquare(counts).pvalue > 0.01


@PROFILE
@given(st.integers(0, 2**32), st.integers(1, 3))
def test_conformal_sets_nested(seed, horizon):
    rng = np.random.default_rng(seed)
    calib = rng.integers(1, 4, size=rng.integers(5, 40))
    scores = score_all_candidates(calib, ConformalConfig(horizon=horizon, max_permutations=60, seed=seed), StateSpace(3))
    alphas = [0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.8, 0.95]
    sets = [set(scores.accepted(a)) for a in alphas]
    for wide, narrow in zip(sets, sets[1:]):
        assert narrow <= wide
    assert np.all((scores.p_values >= 0) & (scores.p_values <= 1))
    single = scores.num_permutations == 1
    np.testing.assert_array_equal(scores.p_values[single], scores.u[single])


@PROFILE
@given(st.integers(0, 2**64 - 1), st.integers(2, 5))
def test_scores_independent_of_threads(seed, threads):
    calib = np.random.default_rng(seed % 2**32).integers(1, 5, size=50)
    a = score_all_candidates(calib, ConformalConfig(horizon=2, max_permutations=40, seed=seed), StateSpace(4))
    b = score_all_candidates(calib, ConformalConfig(horizon=2, max_permutations=40, seed=seed, threads=threads), StateSpace(4))
    for name in ("p_values", "identity_scores", "exceed_counts", "tie_counts", "u"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_study_independent_of_threads(chain):
    P, init = chain
    grid = ExperimentGrid((0.5, 0.9, 1.0), (1, 2), 16, 80, seed=77)
    cfg = ConformalConfig(max_permutations=100)
    ref = list(run_simulation_study(P, init, grid, conformal=cfg).rows())
    for threads in (2, 5):
        assert list(run_simulation_study(P, init, grid, conformal=cfg, threads=threads).rows()) == ref


@pytest.mark.slow
def test_conformal_validity_lower_bound(chain):
    P, init = chain
    R = 500
    alphas = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
    grid = ExperimentGrid(tuple(1 - a for a in alphas), (1, 2, 3, 4), R, 200, seed=31)
    rep = run_simulation_study(P, init, grid, ["conformal"], ConformalConfig(max_permutations=1000))
    for h in (1, 2, 3, 4):
        for a in alphas:
            cell = rep.cell("conformal", h, 1 - a)
            assert cell.empirical_coverage >= (1 - a) - 3 * math.sqrt(a * (1 - a) / R), (h, a)

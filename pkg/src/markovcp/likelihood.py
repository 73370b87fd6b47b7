"""Likelihood-based prediction sets from a fitted Markov chain.

The chain is fitted on the calibration sequence alone.  Candidate
continuations are ranked by their probability given the last observed
state, and the highest-probability prefix reaching mass ``1 - alpha`` is
the prediction set.  Candidates with zero probability are dropped before
ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .composition import Composition, composition_of
from .errors import InvalidInputError, ResourceCapError, UnvisitedStateError
from .markov import StateSpace, TransitionMatrix, estimate_transition_matrix

TIE_RTOL = 1e-12
MASS_TOL = 1e-12
DEFAULT_SUPPORT_CAP = 10**6


@dataclass(frozen=True)
class RankedCandidates:
    sequences: np.ndarray  # (J, horizon), 1-based, descending mass
    masses: np.ndarray
    cumulative: np.ndarray
    universe_size: int
    matrix: TransitionMatrix
    last_state: int

    @property
    def J(self) -> int:
        return int(self.masses.size)

    @property
    def m(self) -> int:
        return self.matrix.m


@dataclass(frozen=True)
class LikelihoodPredictionSet:
    members: np.ndarray  # (size, horizon)
    masses: np.ndarray
    attained_mass: float
    K: int
    mass_deficit: bool = False
    empty: bool = False

    @property
    def size(self) -> int:
        return int(self.members.shape[0])

    def __len__(self) -> int:
        return self.size

    def __contains__(self, forecast) -> bool:
        f = np.asarray(forecast, dtype=np.int64)
        return bool(self.size and np.any(np.all(self.members == f, axis=1)))

    def composition(self, m: int, weighted: bool = False) -> Composition:
        """Per-step state shares of the members, optionally weighted by mass."""
        return composition_of(self.members, m, self.masses if weighted and self.size else None)


def _support(P: np.ndarray, last: int, horizon: int, cap: int):
    """Positive-probability continuations in lexicographic order with their masses."""
    paths = np.zeros((1, 0), dtype=np.int64)
    masses = np.ones(1)
    ends = np.array([last - 1])
    for _ in range(horizon):
        rows = P[ends]
        parent, nxt = np.nonzero(rows > 0)
        if parent.size > cap:
            raise ResourceCapError(
                f"more than {cap} positive-mass candidates; raise the enumeration cap"
            )
        masses = masses[parent] * rows[parent, nxt]
        paths = np.hstack([paths[parent], nxt[:, None] + 1])
        ends = nxt
    return paths, masses


def rank_candidates_from_matrix(
    P: TransitionMatrix, last_state: int, horizon: int, seed, cap: int = DEFAULT_SUPPORT_CAP
) -> RankedCandidates:
    """Rank continuations of ``last_state`` under a given matrix (see :func:`rank_candidates`)."""
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    if P.unvisited[last_state - 1]:
        raise UnvisitedStateError(last_state)
    paths, masses = _support(P.probs, last_state, horizon, cap)
    # stable sort keeps lexicographic order inside equal masses
    order = np.argsort(-masses, kind="stable")
    masses = masses[order]
    paths = paths[order]
    J = masses.size
    new_group = np.ones(J, dtype=bool)
    if J > 1:
        new_group[1:] = (masses[:-1] - masses[1:]) > TIE_RTOL * masses[:-1]
    group = np.cumsum(new_group)
    tokens = np.random.default_rng(seed).random(J)
    order = np.lexsort((np.arange(J), tokens, group))
    masses = masses[order]
    paths = paths[order]
    return RankedCandidates(
        sequences=paths,
        masses=masses,
        cumulative=np.cumsum(masses),
        universe_size=P.m**horizon,
        matrix=P,
        last_state=last_state,
    )


def rank_candidates(
    calibration: Sequence[int], horizon: int, space: StateSpace, seed, cap: int = DEFAULT_SUPPORT_CAP
) -> RankedCandidates:
    """Fit the chain on ``calibration`` and rank every positive-mass continuation.

    Masses are products of one-step transition probabilities starting from the
    last calibration state.  Groups of equal mass (relative tolerance 1e-12)
    are put in a uniformly random order drawn from ``seed``.
    """
    calib = space.validate(calibration, "calibration")
    if calib.size < 2:
        raise InvalidInputError("calibration sequence needs at least two observations")
    P = estimate_transition_matrix(calib, space)
    return rank_candidates_from_matrix(P, int(calib[-1]), horizon, seed, cap)


def _cutoff(ranked: RankedCandidates, alpha: float) -> tuple[int, bool]:
    if not 0 <= alpha < 1:
        raise InvalidInputError(f"alpha must lie in [0, 1), got {alpha}")
    target = 1.0 - alpha
    hit = np.flatnonzero(ranked.cumulative >= target - MASS_TOL)
    if hit.size == 0:
        return ranked.J, True
    return int(hit[0]) + 1, False


def _prefix(ranked: RankedCandidates, k: int, K: int, deficit: bool) -> LikelihoodPredictionSet:
    return LikelihoodPredictionSet(
        members=ranked.sequences[:k],
        masses=ranked.masses[:k],
        attained_mass=float(ranked.cumulative[k - 1]) if k else 0.0,
        K=K,
        mass_deficit=deficit,
        empty=k == 0,
    )


def hdr_set(ranked: RankedCandidates, alpha: float) -> LikelihoodPredictionSet:
    """Smallest highest-mass prefix whose total mass reaches ``1 - alpha``.

    ``alpha = 0`` asks for the whole support.  When the available mass falls
    short of the target the full support is returned with ``mass_deficit``
    set.
    """
    K, deficit = _cutoff(ranked, alpha)
    return _prefix(ranked, K, K, deficit)


def randomized_hdr_set(ranked: RankedCandidates, alpha: float, u_star: float) -> LikelihoodPredictionSet:
    """HDR set whose last member is kept with probability ``p``.

    ``p`` is the fraction of the last member's mass needed to reach
    ``1 - alpha`` exactly, so the expected attained mass equals ``1 - alpha``.
    With ``K = 1`` and ``u_star > p`` the result is empty and flagged.
    """
    if not 0 <= u_star <= 1:
        raise InvalidInputError("u_star must lie in [0, 1]")
    K, deficit = _cutoff(ranked, alpha)
    if deficit:
        return _prefix(ranked, K, K, True)
    before = float(ranked.cumulative[K - 2]) if K > 1 else 0.0
    p = ((1.0 - alpha) - before) / float(ranked.masses[K - 1])
    keep = K if u_star <= p else K - 1
    return _prefix(ranked, keep, K, False)


def keep_probability(ranked: RankedCandidates, alpha: float) -> float:
    """The ``p`` used by :func:`randomized_hdr_set`."""
    K, deficit = _cutoff(ranked, alpha)
    if deficit:
        return 1.0
    before = float(ranked.cumulative[K - 2]) if K > 1 else 0.0
    return ((1.0 - alpha) - before) / float(ranked.masses[K - 1])

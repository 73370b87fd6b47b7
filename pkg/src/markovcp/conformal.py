"""Conformal prediction sets for future state sequences of a Markov chain.

For every candidate continuation the calibration sequence is extended by
the candidate, the transition matrix is re-estimated on the extended
sequence, and the candidate's nonconformity score is compared with the
scores of i-block permutations of the extended sequence.  Candidates whose
randomized permutation p-value exceeds ``alpha`` form the prediction set.

The per-candidate work runs in :mod:`markovcp._kernels`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels, _rng
from .composition import Composition, composition_of
from .errors import InvalidInputError, ResourceCapError
from .markov import StateSpace, TransitionMatrix, transition_counts

SCORE_MODES = ("one-step", "j-step")
TIE_TOL = 1e-12
DEFAULT_MAX_PERMUTATIONS = 5000
DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.2
    horizon: int = 1
    max_permutations: int = DEFAULT_MAX_PERMUTATIONS
    score_mode: str = "one-step"
    plus_one: bool = False
    plus_one_state: int = 1
    seed: int = 0
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.max_permutations < 1:
            raise InvalidInputError("max_permutations must be >= 1")
        if self.score_mode not in SCORE_MODES:
            raise InvalidInputError(f"score_mode must be one of {SCORE_MODES}")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")
        _rng.check_seed(self.seed)


@dataclass(frozen=True)
class ScoredCandidate:
    forecast: tuple[int, ...]
    p_value: float
    identity_score: float
    num_permutations: int
    exceed_count: int
    tie_count: int
    u: float


def candidate_index(forecast: Sequence[int], m: int) -> int:
    """Lexicographic index of a 1-based forecast among all ``m**horizon`` sequences."""
    idx = 0
    for x in forecast:
        idx = idx * m + (int(x) - 1)
    return idx


def index_to_sequences(indices: np.ndarray, m: int, horizon: int) -> np.ndarray:
    """Inverse of :func:`candidate_index` for an array of indices; rows are 1-based sequences."""
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.empty((idx.size, horizon), dtype=np.int64)
    for j in range(horizon - 1, -1, -1):
        out[:, j] = idx % m + 1
        idx //= m
    return out


@dataclass(frozen=True)
class CandidateScores:
    """Kernel output for every candidate in lexicographic order."""

    m: int
    horizon: int
    p_values: np.ndarray
    identity_scores: np.ndarray
    num_permutations: np.ndarray
    exceed_counts: np.ndarray
    tie_counts: np.ndarray
    u: np.ndarray

    @property
    def universe_size(self) -> int:
        return self.p_values.size

    def accepted(self, alpha: float) -> np.ndarray:
        """Indices with p-value above ``alpha``; ``alpha=0`` keeps every positive p-value."""
        return np.flatnonzero(self.p_values > alpha)

    def scored(self, index: int) -> ScoredCandidate:
        return ScoredCandidate(
            forecast=tuple(int(v) for v in index_to_sequences([index], self.m, self.horizon)[0]),
            p_value=float(self.p_values[index]),
            identity_score=float(self.identity_scores[index]),
            num_permutations=int(self.num_permutations[index]),
            exceed_count=int(self.exceed_counts[index]),
            tie_count=int(self.tie_counts[index]),
            u=float(self.u[index]),
        )


@dataclass(frozen=True)
class ConformalPredictionSet:
    level: float
    scores: CandidateScores
    members: np.ndarray  # lexicographic candidate indices

    @property
    def universe_size(self) -> int:
        return self.scores.universe_size

    @property
    def size(self) -> int:
        return int(self.members.size)

    def __len__(self) -> int:
        return self.size

    @property
    def sequences(self) -> np.ndarray:
        return index_to_sequences(self.members, self.scores.m, self.scores.horizon)

    @property
    def candidates(self) -> list[ScoredCandidate]:
        return [self.scores.scored(int(k)) for k in self.members]

    def __contains__(self, forecast) -> bool:
        k = candidate_index(forecast, self.scores.m)
        pos = np.searchsorted(self.members, k)
        return bool(pos < self.members.size and self.members[pos] == k)

    def at_level(self, level: float) -> "ConformalPredictionSet":
        """The set for another level, reusing the same p-values."""
        return ConformalPredictionSet(level, self.scores, self.scores.accepted(_alpha(level)))


def _alpha(level: float) -> float:
    return max(0.0, round(1.0 - level, 12))


def nonconformity_score(
    permuted_seq: Sequence[int], T: int, horizon: int, P: TransitionMatrix, mode: str = "one-step"
) -> float:
    """One minus the mean predicted probability of the forecast window.

    The window is positions ``T..T+horizon`` (1-based) of ``permuted_seq``.
    ``one-step`` scores consecutive transitions inside the window; ``j-step``
    scores the ``j``-step transition from position ``T`` to ``T+j``.
    """
    if mode not in SCORE_MODES:
        raise InvalidInputError(f"score mode must be one of {SCORE_MODES}")
    s = [int(x) - 1 for x in permuted_seq]
    if len(s) < T + horizon or T < 1 or horizon < 1:
        raise InvalidInputError("sequence shorter than T + horizon")
    w = s[T - 1 : T + horizon]
    total = 0.0
    if mode == "one-step":
        for j in range(1, horizon + 1):
            total += float(P.probs[w[j - 1], w[j]])
    else:
        Pj = np.array(P.probs)
        for j in range(1, horizon + 1):
            total += float(Pj[w[0], w[j]])
            Pj = Pj @ P.probs
    score = 1.0 - total / horizon
    return min(max(score, 0.0), 1.0)


def _check_calibration(calibration, cfg: ConformalConfig, space: StateSpace) -> np.ndarray:
    calib = space.validate(calibration, "calibration")
    if calib.size < 2:
        raise InvalidInputError("calibration sequence needs at least two observations")
    if cfg.plus_one and not 1 <= cfg.plus_one_state <= space.m:
        raise InvalidInputError(f"plus_one_state must lie in 1..{space.m}")
    return calib


def _run_kernel(calib, cfg: ConformalConfig, space: StateSpace, lo: int, hi: int, threads: int):
    m, H = space.m, cfg.horizon
    calib0 = np.ascontiguousarray(calib - 1, dtype=np.int64)
    base = np.ascontiguousarray(transition_counts(calib, m), dtype=np.int64)
    n = hi - lo
    q = np.empty(n)
    sid = np.empty(n)
    nperm = np.empty(n, dtype=np.int64)
    greater = np.empty(n, dtype=np.int64)
    equal = np.empty(n, dtype=np.int64)
    u = np.empty(n)
    plus = cfg.plus_one_state - 1 if cfg.plus_one else -1
    jstep = cfg.score_mode == "j-step"

    def work(a, b):
        s = slice(a - lo, b - lo)
        _kernels.score_candidates(
            calib0, base, m, H, a, b, cfg.max_permutations, jstep, plus, cfg.seed, TIE_TOL,
            q[s], sid[s], nperm[s], greater[s], equal[s], u[s],
        )

    if threads <= 1 or n < 2:
        work(lo, hi)
    else:
        # contiguous chunks; results do not depend on the split
        edges = np.linspace(lo, hi, min(threads * 4, n) + 1).astype(np.int64)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda ab: work(int(ab[0]), int(ab[1])), zip(edges[:-1], edges[1:])))
    return q, sid, nperm, greater, equal, u


def score_all_candidates(
    calibration: Sequence[int], cfg: ConformalConfig, space: StateSpace
) -> CandidateScores:
    """Conformal p-values of every candidate continuation, in lexicographic order."""
    calib = _check_calibration(calibration, cfg, space)
    universe = space.m**cfg.horizon
    if universe > cfg.enumeration_cap:
        raise ResourceCapError(
            f"{space.m}**{cfg.horizon} = {universe} candidates exceeds the enumeration cap "
            f"of {cfg.enumeration_cap}"
        )
    q, sid, nperm, greater, equal, u = _run_kernel(calib, cfg, space, 0, universe, cfg.threads)
    return CandidateScores(space.m, cfg.horizon, q, sid, nperm, greater, equal, u)


def p_value(
    candidate: Sequence[int], calibration: Sequence[int], cfg: ConformalConfig, space: StateSpace
) -> ScoredCandidate:
    """Randomized permutation p-value of one candidate continuation.

    Identical to the value the candidate receives inside
    :func:`conformal_prediction_set` for the same configuration.
    """
    calib = _check_calibration(calibration, cfg, space)
    cand = space.validate(candidate, "candidate")
    if cand.size != cfg.horizon:
        raise InvalidInputError(f"candidate length {cand.size} != horizon {cfg.horizon}")
    k = candidate_index(cand, space.m)
    q, sid, nperm, greater, equal, u = _run_kernel(calib, cfg, space, k, k + 1, 1)
    return ScoredCandidate(
        forecast=tuple(int(v) for v in cand),
        p_value=float(q[0]),
        identity_score=float(sid[0]),
        num_permutations=int(nperm[0]),
        exceed_count=int(greater[0]),
        tie_count=int(equal[0]),
        u=float(u[0]),
    )


def conformal_prediction_set(
    calibration: Sequence[int], cfg: ConformalConfig, space: StateSpace
) -> ConformalPredictionSet:
    """All candidate continuations whose p-value exceeds ``cfg.alpha``.

    Every candidate in the ``m**horizon`` universe is scored; none is pruned.
    ``result.scores`` keeps the full scored list.
    """
    scores = score_all_candidates(calibration, cfg, space)
    return ConformalPredictionSet(1.0 - cfg.alpha, scores, scores.accepted(cfg.alpha))


def set_composition(pred_set: ConformalPredictionSet) -> Composition:
    """Share of member sequences in each state at each forecast step."""
    return composition_of(pred_set.sequences, pred_set.scores.m)

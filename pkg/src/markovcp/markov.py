"""Discrete-state Markov chain primitives.

States are labelled ``1..m`` at the public surface.  Arrays handed to the
scoring kernels use 0-based indices; conversion happens at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, ParseError, UnvisitedStateError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateSpace:
    """The state alphabet ``{1, ..., m}``."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidInputError(f"state space needs m >= 2, got {self.m}")

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.m + 1)

    def validate(self, seq: Sequence[int], name: str = "sequence") -> np.ndarray:
        """Return ``seq`` as an int64 array after checking every label is in range."""
        arr = np.asarray(seq)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInputError(f"{name} must be a nonempty 1-d sequence")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.mod(arr, 1) == 0):
                raise InvalidInputError(f"{name} contains non-integer labels")
        arr = arr.astype(np.int64)
        bad = (arr < 1) | (arr > self.m)
        if bad.any():
            raise InvalidInputError(
                f"{name} contains labels outside 1..{self.m}: {sorted(set(arr[bad].tolist()))}"
            )
        return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix with the number of visits behind each row.

    Rows whose ``row_visits`` is zero carry no estimate; they are stored as
    uniform rows and reported by :attr:`unvisited`.  ``row_visits`` is
    ``None`` for matrices that were specified rather than estimated.
    """

    probs: np.ndarray
    row_visits: np.ndarray | None = None

    def __post_init__(self):
        P = _frozen(self.probs)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise InvalidInputError(f"transition matrix must be square m x m with m >= 2, got {P.shape}")
        if np.any(P < 0) or np.any(P > 1) or not np.all(np.isfinite(P)):
            raise InvalidInputError("transition probabilities must lie in [0, 1]")
        sums = P.sum(axis=1)
        for r, s in enumerate(sums):
            if abs(s - 1.0) > ROW_SUM_TOL:
                raise InvalidInputError(f"row {r + 1} sums to {s!r}, not 1")
        object.__setattr__(self, "probs", P)
        if self.row_visits is not None:
            v = np.array(self.row_visits, dtype=np.int64)
            if v.shape != (P.shape[0],) or np.any(v < 0):
                raise InvalidInputError("row_visits must be a nonnegative m-vector")
            v.setflags(write=False)
            object.__setattr__(self, "row_visits", v)

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    @property
    def unvisited(self) -> np.ndarray:
        """Boolean mask of rows that had no observations."""
        if self.row_visits is None:
            return np.zeros(self.m, dtype=bool)
        return self.row_visits == 0

    def row(self, state: int) -> np.ndarray:
        """Row of 1-based ``state``; raises if that row was never observed."""
        if self.unvisited[state - 1]:
            raise UnvisitedStateError(state)
        return self.probs[state - 1]

    def counts(self) -> np.ndarray:
        """Integer transition counts recovered from probabilities and visits."""
        if self.row_visits is None:
            raise InvalidInputError("matrix was not estimated from data")
        return np.rint(self.probs * self.row_visits[:, None]).astype(np.int64) * (
            ~self.unvisited
        )[:, None]


@dataclass(frozen=True)
class InitialDistribution:
    probs: np.ndarray = field()

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > ROW_SUM_TOL:
            raise InvalidInputError("initial distribution must be a nonnegative vector summing to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, m: int) -> "InitialDistribution":
        return cls(np.full(m, 1.0 / m))

    @classmethod
    def point_mass(cls, m: int, state: int) -> "InitialDistribution":
        p = np.zeros(m)
        p[state - 1] = 1.0
        return cls(p)


def transition_counts(seq: np.ndarray, m: int) -> np.ndarray:
    """m x m matrix of pairwise transition counts of a 1-based sequence."""
    s = np.asarray(seq, dtype=np.int64) - 1
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (s[:-1], s[1:]), 1)
    return counts


def estimate_transition_matrix(seq: Sequence[int], space: StateSpace) -> TransitionMatrix:
    """Maximum-likelihood transition matrix of an observed state sequence.

    Parameters
    ----------
    seq : sequence of int
        Observed states, labels ``1..m``; at least two observations.
    space : StateSpace

    Returns
    -------
    TransitionMatrix
        Empirical transition frequencies.  Rows of states never left are
        uniform and flagged in :attr:`TransitionMatrix.unvisited`.
    """
    arr = space.validate(seq)
    if arr.size < 2:
        raise InvalidInputError("need at least two observations to estimate transitions")
    counts = transition_counts(arr, space.m)
    visits = counts.sum(axis=1)
    probs = np.full((space.m, space.m), 1.0 / space.m)
    seen = visits > 0
    probs[seen] = counts[seen] / visits[seen, None]
    return TransitionMatrix(probs, visits)


def sequence_log_probability(forecast: Sequence[int], last_state: int, P: TransitionMatrix) -> float:
    """Log-probability of ``forecast`` following ``last_state``; ``-inf`` on a zero factor."""
    path = [int(last_state)] + [int(x) for x in forecast]
    if len(path) < 2:
        raise InvalidInputError("forecast must be nonempty")
    if min(path) < 1 or max(path) > P.m:
        raise InvalidInputError("states outside the matrix's state space")
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        p = P.probs[a - 1, b - 1]
        if p == 0.0:
            return -math.inf
        total += math.log(p)
    return total


def matrix_power_distribution(
    init: InitialDistribution, P: TransitionMatrix, steps: int
) -> InitialDistribution:
    """Distribution after ``steps`` transitions, by repeated vector-matrix products."""
    if steps < 0:
        raise InvalidInputError("steps must be nonnegative")
    v = np.array(init.probs)
    for _ in range(steps):
        v = v @ P.probs
    return InitialDistribution(v / v.sum())


def simulate_chains(
    init: InitialDistribution, P: TransitionMatrix, length: int, n_chains: int, seed
) -> np.ndarray:
    """Simulate ``n_chains`` independent chains; returns an (n_chains, length) array of labels."""
    if length < 1 or n_chains < 1:
        raise InvalidInputError("length and n_chains must be positive")
    m = P.m
    if init.probs.shape != (m,):
        raise InvalidInputError("initial distribution does not match the matrix size")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(P.probs, axis=1)
    cum[:, -1] = 1.0
    cum0 = np.cumsum(init.probs)
    cum0[-1] = 1.0
    out = np.empty((n_chains, length), dtype=np.int64)
    u = rng.random((n_chains, length))
    out[:, 0] = np.searchsorted(cum0, u[:, 0], side="right")
    unvisited = P.unvisited
    for t in range(1, length):
        prev = out[:, t - 1]
        if unvisited[prev].any():
            raise UnvisitedStateError(
                int(prev[unvisited[prev]][0]) + 1,
                "cannot simulate from a state whose transition row was never observed",
            )
        out[:, t] = (u[:, t, None] >= cum[prev]).sum(axis=1)
    return out + 1


def simulate_chain(init: InitialDistribution, P: TransitionMatrix, length: int, seed) -> np.ndarray:
    """One simulated chain of ``length`` labels, reproducible from ``seed``."""
    return simulate_chains(init, P, length, 1, seed)[0]


def read_matrix_csv(path) -> TransitionMatrix:
    """Read a comma-separated row-stochastic matrix; ``#`` starts a comment line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            row = []
            for col, cell in enumerate(text.split(","), 1):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ParseError(path, line_no, col, f"not a number: {cell.strip()!r}") from None
            if rows and len(row) != len(rows[0]):
                raise ParseError(path, line_no, None, f"expected {len(rows[0])} entries, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ParseError(path, 1, None, "no rows")
    try:
        return TransitionMatrix(np.array(rows))
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def write_matrix_csv(path, P: TransitionMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in P.probs:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def conflict_reference_chain() -> tuple[TransitionMatrix, InitialDistribution]:
    """The packaged four-state conflict chain with a uniform initial distribution."""
    from importlib.resources import files

    return read_matrix_csv(files("markovcp") / "data" / "conflict_chain.csv"), InitialDistribution.uniform(4)

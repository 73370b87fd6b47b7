"""Per-step state composition of a set of forecast sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Composition:
    """``proportions[t, s]`` is the share of member sequences in state ``s+1`` at step ``t+1``.

    ``proportions`` is ``None`` for an empty set.
    """

    proportions: np.ndarray | None
    size: int

    @property
    def empty(self) -> bool:
        return self.proportions is None

    def step(self, t: int) -> dict[int, float]:
        """Nonzero proportions at 1-based step ``t`` keyed by state label."""
        if self.proportions is None:
            return {}
        row = self.proportions[t - 1]
        return {s + 1: float(p) for s, p in enumerate(row) if p > 0}

    def entropy(self, t: int) -> float:
        """Shannon entropy (nats) of the composition at 1-based step ``t``."""
        if self.proportions is None:
            return 0.0
        p = self.proportions[t - 1]
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    def rows(self):
        """Yield ``(step, state, proportion)`` tuples, steps and states 1-based."""
        if self.proportions is None:
            return
        H, m = self.proportions.shape
        for t in range(H):
            for s in range(m):
                yield t + 1, s + 1, float(self.proportions[t, s])


def composition_of(sequences: np.ndarray, m: int, weights: np.ndarray | None = None) -> Composition:
    """State proportions of an (n, horizon) array of 1-based sequences.

    Members count equally unless ``weights`` is given, in which case each
    sequence contributes its weight (for example its probability mass).
    """
    seqs = np.asarray(sequences, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[0] == 0:
        return Composition(None, 0)
    n, H = seqs.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be a nonnegative vector with positive sum")
    props = np.zeros((H, m))
    for t in range(H):
        props[t] = np.bincount(seqs[:, t] - 1, weights=w, minlength=m)[:m] / w.sum()
    props.setflags(write=False)
    return Composition(props, n)

"""Country-month fatality counts to conflict-state series.

States: 1 peacetime, 2 escalation, 3 war, 4 deescalation.  A month's state
is determined by whether the previous and current months recorded any
fatalities.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, ParseError
from .markov import (
    InitialDistribution,
    StateSpace,
    TransitionMatrix,
    estimate_transition_matrix,
)

PEACE, ESCALATION, WAR, DEESCALATION = 1, 2, 3, 4
STATE_NAMES = {PEACE: "peacetime", ESCALATION: "escalation", WAR: "war", DEESCALATION: "deescalation"}
CONFLICT_SPACE = StateSpace(4)

ADJACENCY = np.array(
    [
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 1, 1],
        [1, 1, 0, 0],
    ],
    dtype=np.int64,
)

FATALITY_COLUMNS = ("country_id", "year", "month", "fatalities")
STATE_COLUMNS = ("country_id", "year", "month", "state")
EXCLUSION_COLUMNS = ("country_id", "rule_failed")
RULES = ("min_nonpeace", "peace_proportion", "single_state")


def month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def month_from_index(k: int) -> tuple[int, int]:
    return k // 12, k % 12 + 1


@dataclass(frozen=True)
class CountrySeries:
    country_id: str
    months: tuple[tuple[int, int], ...]
    fatalities: np.ndarray

    def __post_init__(self):
        if len(self.months) != len(self.fatalities):
            raise InvalidInputError(f"{self.country_id}: months and fatalities differ in length")
        idx = [month_index(y, m) for y, m in self.months]
        if any(b - a != 1 for a, b in zip(idx[:-1], idx[1:])):
            raise InvalidInputError(f"{self.country_id}: months are not contiguous")
        if np.any(np.asarray(self.fatalities) < 0):
            raise InvalidInputError(f"{self.country_id}: negative fatality count")


@dataclass(frozen=True)
class LabeledSeries:
    country_id: str
    months: tuple[tuple[int, int], ...]
    states: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def index_of(self, year: int, month: int) -> int:
        """Position of a month in the series; raises ``KeyError`` if absent."""
        if not self.months:
            raise KeyError((year, month))
        k = month_index(year, month) - month_index(*self.months[0])
        if not 0 <= k < len(self.months):
            raise KeyError((year, month))
        return k


def label_states(series: CountrySeries) -> LabeledSeries:
    y = np.asarray(series.fatalities) > 0
    if y.size == 0:
        raise InvalidInputError(f"{series.country_id}: empty series")
    states = np.empty(y.size, dtype=np.int64)
    states[0] = WAR if y[0] else PEACE
    prev, cur = y[:-1], y[1:]
    states[1:] = np.select(
        [~prev & ~cur, ~prev & cur, prev & cur],
        [PEACE, ESCALATION, WAR],
        default=DEESCALATION,
    )
    return LabeledSeries(series.country_id, tuple(series.months), states)


def respects_adjacency(states: Sequence[int]) -> bool:
    s = np.asarray(states, dtype=np.int64) - 1
    return bool(np.all(ADJACENCY[s[:-1], s[1:]] == 1))


def exclusion_rule(states: Sequence[int], min_nonpeace: int = 5, max_peace_proportion: float = 0.99):
    """Name of the first cleaning rule a series fails, or ``None`` if it is kept."""
    s = np.asarray(states)
    if np.count_nonzero(s != PEACE) < min_nonpeace:
        return "min_nonpeace"
    if np.count_nonzero(s == PEACE) / s.size > max_peace_proportion:
        return "peace_proportion"
    if np.all(s == s[0]):
        return "single_state"
    return None


def clean_corpus(
    series_list: Iterable[LabeledSeries], min_nonpeace: int = 5, max_peace_proportion: float = 0.99
) -> tuple[list[LabeledSeries], list[tuple[str, str]]]:
    """Split a corpus into retained series and ``(country_id, rule_failed)`` exclusions."""
    kept, excluded = [], []
    for s in series_list:
        rule = exclusion_rule(s.states, min_nonpeace, max_peace_proportion)
        if rule is None:
            kept.append(s)
        else:
            excluded.append((s.country_id, rule))
    return kept, excluded


def derive_population_matrix(
    retained: Sequence[LabeledSeries], space: StateSpace = CONFLICT_SPACE
) -> tuple[TransitionMatrix, InitialDistribution]:
    """Entrywise mean of per-country estimates, skipping rows a country never left.

    The initial distribution is uniform.  ``row_visits`` of the result counts
    the countries contributing to each row.
    """
    if not retained:
        raise InvalidInputError("no retained series to average")
    m = space.m
    total = np.zeros((m, m))
    n_rows = np.zeros(m, dtype=np.int64)
    for s in retained:
        if len(s.states) < 2:
            continue
        P = estimate_transition_matrix(s.states, space)
        seen = ~P.unvisited
        total[seen] += P.probs[seen]
        n_rows += seen
    if np.any(n_rows == 0):
        missing = [int(k) + 1 for k in np.flatnonzero(n_rows == 0)]
        raise InvalidInputError(f"states {missing} are never left in any retained series")
    probs = total / n_rows[:, None]
    probs /= probs.sum(axis=1, keepdims=True)
    return TransitionMatrix(probs, n_rows), InitialDistribution.uniform(m)


# -- file formats ---------------------------------------------------------


def _reader(path: Path, handle, columns: Sequence[str]):
    reader = csv.DictReader(handle)
    if reader.fieldnames is None:
        raise ParseError(path, 1, None, "no rows")
    header = [h.strip() for h in reader.fieldnames]
    missing = [c for c in columns if c not in header]
    if missing:
        raise ParseError(path, 1, missing[0], f"missing column; expected header {','.join(columns)}")
    reader.fieldnames = header
    return reader


def _int_field(path, line, row, column, lo=None, hi=None) -> int:
    raw = (row.get(column) or "").strip()
    try:
        value = int(raw)
    except ValueError:
        raise ParseError(path, line, column, f"expected an integer, got {raw!r}") from None
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ParseError(path, line, column, f"value {value} out of range")
    return value


def _group_rows(path, rows):
    """Sort ``(country, month_index, value, line)`` rows and check contiguity per country."""
    by_country = defaultdict(list)
    for country, k, value, line in rows:
        by_country[country].append((k, value, line))
    out = []
    for country in sorted(by_country):
        entries = sorted(by_country[country])
        for (k0, _, _), (k1, _, line) in zip(entries[:-1], entries[1:]):
            if k1 == k0:
                y, m = month_from_index(k1)
                raise ParseError(path, line, None, f"country {country!r}: duplicate month {y}-{m:02d}")
            if k1 != k0 + 1:
                y, m = month_from_index(k0 + 1)
                raise ParseError(
                    path, line, None, f"country {country!r}: months not contiguous, {y}-{m:02d} missing"
                )
        months = tuple(month_from_index(k) for k, _, _ in entries)
        out.append((country, months, np.array([v for _, v, _ in entries], dtype=np.int64)))
    return out


def read_fatalities_csv(path) -> list[CountrySeries]:
    """Parse ``country_id,year,month,fatalities`` rows into per-country series."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(path, fh, FATALITY_COLUMNS)
        for row in reader:
            line = reader.line_num
            country = (row.get("country_id") or "").strip()
            if not country:
                raise ParseError(path, line, "country_id", "empty country id")
            year = _int_field(path, line, row, "year", 0)
            month = _int_field(path, line, row, "month", 1, 12)
            fat = _int_field(path, line, row, "fatalities", 0)
            rows.append((country, month_index(year, month), fat, line))
    if not rows:
        raise ParseError(path, 1, None, "no rows")
    return [CountrySeries(c, months, vals) for c, months, vals in _group_rows(path, rows)]


def read_states_csv(path, space: StateSpace = CONFLICT_SPACE) -> list[LabeledSeries]:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(path, fh, STATE_COLUMNS)
        for row in reader:
            line = reader.line_num
            country = (row.get("country_id") or "").strip()
            if not country:
                raise ParseError(path, line, "country_id", "empty country id")
            year = _int_field(path, line, row, "year", 0)
            month = _int_field(path, line, row, "month", 1, 12)
            state = _int_field(path, line, row, "state", 1, space.m)
            rows.append((country, month_index(year, month), state, line))
    if not rows:
        raise ParseError(path, 1, None, "no rows")
    return [LabeledSeries(c, months, vals) for c, months, vals in _group_rows(path, rows)]


def write_states_csv(path, series: Iterable[LabeledSeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATE_COLUMNS)
        for s in series:
            for (year, month), state in zip(s.months, s.states):
                w.writerow([s.country_id, year, month, int(state)])


def write_fatalities_csv(path, series: Iterable[CountrySeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FATALITY_COLUMNS)
        for s in series:
            for (year, month), y in zip(s.months, s.fatalities):
                w.writerow([s.country_id, year, month, int(y)])


def write_exclusions_csv(path, exclusions: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCLUSION_COLUMNS)
        for country, rule in exclusions:
            w.writerow([country, rule])


def fatalities_for_states(states: Sequence[int], rng: np.random.Generator, scale: float = 25.0) -> np.ndarray:
    """Fatality counts whose labels reproduce ``states`` (first month 2 or 4 read as 3 or 1).

    Useful for building synthetic fixtures from simulated chains.
    """
    s = np.asarray(states)
    active = (s == ESCALATION) | (s == WAR)
    counts = np.zeros(s.size, dtype=np.int64)
    counts[active] = 1 + rng.poisson(scale, size=int(active.sum()))
    return counts

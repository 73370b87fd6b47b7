"""Monte Carlo coverage studies, backtests and forward forecasts.

Every replication derives its random streams from ``(seed, horizon_index,
replication, purpose)``, so reports do not depend on the number of worker
threads.  For a given horizon and replication one sequence is simulated and
scored once; the prediction sets for all target levels are thresholds of
those scores.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .composition import Composition
from .conformal import (
    ConformalConfig,
    ConformalPredictionSet,
    candidate_index,
    conformal_prediction_set,
    score_all_candidates,
    set_composition,
)
from .errors import InvalidInputError, MarkovCPError
from .ingest import LabeledSeries, month_from_index, month_index
from .likelihood import (
    LikelihoodPredictionSet,
    hdr_set,
    randomized_hdr_set,
    rank_candidates,
)
from .markov import (
    InitialDistribution,
    StateSpace,
    TransitionMatrix,
    matrix_power_distribution,
    simulate_chain,
)

METHODS = ("conformal", "likelihood", "likelihood_randomized")
RELIABILITY_COLUMNS = (
    "method",
    "horizon",
    "target_coverage",
    "empirical_coverage",
    "mc_stderr",
    "mean_cardinality",
    "failures",
)
COMPOSITION_COLUMNS = ("method", "step", "state", "proportion")
DEFAULT_LEVELS = tuple(round(0.50 + 0.05 * k, 2) for k in range(11))

_SIM, _CP, _LIKE, _USTAR = range(4)


def substream_seed(seed: int, *keys: int) -> int:
    """A 64-bit seed for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def level_to_alpha(level: float) -> float:
    return max(0.0, round(1.0 - level, 12))


@dataclass(frozen=True)
class ExperimentGrid:
    target_levels: tuple[float, ...] = DEFAULT_LEVELS
    horizons: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    replications: int = 500
    calibration_length: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_levels", tuple(float(v) for v in self.target_levels))
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if not self.target_levels or any(not 0 < v <= 1 for v in self.target_levels):
            raise InvalidInputError("target levels must lie in (0, 1]")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise InvalidInputError("horizons must be >= 1")
        if self.replications < 1:
            raise InvalidInputError("replications must be >= 1")
        if self.calibration_length < 2:
            raise InvalidInputError("calibration length must be >= 2")


@dataclass
class CoverageCell:
    method: str
    horizon: int
    target_coverage: float
    covered: int = 0
    trials: int = 0
    failures: int = 0
    cardinality_sum: int = 0

    @property
    def empirical_coverage(self) -> float:
        return self.covered / self.trials if self.trials else math.nan

    @property
    def mc_stderr(self) -> float:
        if not self.trials:
            return math.nan
        p = self.empirical_coverage
        return math.sqrt(p * (1 - p) / self.trials)

    @property
    def mean_cardinality(self) -> float:
        return self.cardinality_sum / self.trials if self.trials else math.nan


@dataclass
class CoverageReport:
    cells: list[CoverageCell]
    dropped: list[tuple[str, str]] = field(default_factory=list)

    def cell(self, method: str, horizon: int, level: float) -> CoverageCell:
        for c in self.cells:
            if c.method == method and c.horizon == horizon and abs(c.target_coverage - level) < 1e-9:
                return c
        raise KeyError((method, horizon, level))

    def rows(self):
        for c in self.cells:
            yield (
                c.method,
                c.horizon,
                f"{c.target_coverage:.2f}",
                f"{c.empirical_coverage:.6f}",
                f"{c.mc_stderr:.6f}",
                f"{c.mean_cardinality:.6f}",
                c.failures,
            )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RELIABILITY_COLUMNS)
            w.writerows(self.rows())

    def cardinality_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method", "horizon", "target_coverage", "mean_cardinality"))
            for c in self.cells:
                w.writerow((c.method, c.horizon, f"{c.target_coverage:.2f}", f"{c.mean_cardinality:.6f}"))


@dataclass(frozen=True)
class CompositionReport:
    compositions: dict[str, Composition]

    def rows(self):
        for method, comp in self.compositions.items():
            for step, state, prop in comp.rows():
                yield method, step, state, f"{prop:.6f}"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPOSITION_COLUMNS)
            w.writerows(self.rows())


def _check_methods(methods) -> tuple[str, ...]:
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown or not methods:
        raise InvalidInputError(f"methods must be a nonempty subset of {METHODS}")
    return tuple(m for m in METHODS if m in methods)


def _evaluate(
    calibration: np.ndarray,
    truth: np.ndarray,
    horizon: int,
    levels: Sequence[float],
    methods: Sequence[str],
    space: StateSpace,
    cp_template: ConformalConfig,
    seeds: tuple[int, int, int],
):
    """Coverage and cardinality of each method at each level for one split.

    Returns ``{method: [(covered, cardinality), ...] or None on failure}``.
    """
    cp_seed, like_seed, ustar_seed = seeds
    out = {}
    alphas = [level_to_alpha(v) for v in levels]
    if "conformal" in methods:
        try:
            cfg = replace(cp_template, horizon=horizon, seed=cp_seed, threads=1)
            scores = score_all_candidates(calibration, cfg, space)
            q_truth = scores.p_values[candidate_index(truth, space.m)]
            out["conformal"] = [
                (bool(q_truth > a), int(np.count_nonzero(scores.p_values > a))) for a in alphas
            ]
        except MarkovCPError:
            out["conformal"] = None
    like = [m for m in methods if m.startswith("likelihood")]
    if like:
        try:
            ranked = rank_candidates(calibration, horizon, space, like_seed)
        except MarkovCPError:
            ranked = None
        rank_of_truth = None
        if ranked is not None:
            hit = np.flatnonzero(np.all(ranked.sequences == truth, axis=1))
            rank_of_truth = int(hit[0]) if hit.size else None
        u_star = np.random.default_rng(ustar_seed).random(len(alphas))
        for method in like:
            if ranked is None:
                out[method] = None
                continue
            res = []
            for a, u in zip(alphas, u_star):
                s = hdr_set(ranked, a) if method == "likelihood" else randomized_hdr_set(ranked, a, u)
                res.append((rank_of_truth is not None and rank_of_truth < s.size, s.size))
            out[method] = res
    return out


def _new_cells(methods, horizons, levels):
    return {
        (m, h, v): CoverageCell(m, h, v) for m in methods for h in horizons for v in levels
    }


def _accumulate(cells, result, horizon, levels):
    for method, res in result.items():
        for k, v in enumerate(levels):
            cell = cells[(method, horizon, v)]
            if res is None:
                cell.failures += 1
            else:
                covered, card = res[k]
                cell.trials += 1
                cell.covered += int(covered)
                cell.cardinality_sum += card


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_simulation_study(
    true_P: TransitionMatrix,
    true_init: InitialDistribution,
    grid: ExperimentGrid,
    methods: Iterable[str] = METHODS,
    conformal: ConformalConfig | None = None,
    threads: int = 1,
) -> CoverageReport:
    """Coverage of each method over ``grid`` for chains simulated from ``true_P``.

    For each horizon and replication a chain of length ``T + horizon`` is
    simulated, its first ``T`` states calibrate the predictors and the rest is
    the truth.  Predictor errors count as failures of that replication.
    """
    methods = _check_methods(methods)
    space = StateSpace(true_P.m)
    template = conformal or ConformalConfig()
    T = grid.calibration_length
    cells = _new_cells(methods, grid.horizons, grid.target_levels)

    for h_idx, H in enumerate(grid.horizons):

        def one(r, h_idx=h_idx, H=H):
            seq = simulate_chain(true_init, true_P, T + H, substream_seed(grid.seed, h_idx, r, _SIM))
            seeds = tuple(substream_seed(grid.seed, h_idx, r, k) for k in (_CP, _LIKE, _USTAR))
            return _evaluate(seq[:T], seq[T:], H, grid.target_levels, methods, space, template, seeds)

        for result in _map(one, range(grid.replications), threads):
            _accumulate(cells, result, H, grid.target_levels)
    return CoverageReport(list(cells.values()))


def expected_coverage_analytic(true_P: TransitionMatrix, true_init: InitialDistribution, T: int) -> float:
    """Predicted one-step coverage of a likelihood set holding only the modal next state.

    Weights each row's largest transition probability by the distribution of
    the state at time ``T``.
    """
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    marginal = matrix_power_distribution(true_init, true_P, T - 1).probs
    return float(np.dot(true_P.probs.max(axis=1), marginal))


def run_backtest(
    corpus: Sequence[LabeledSeries],
    cutoff: tuple[int, int],
    grid: ExperimentGrid,
    methods: Iterable[str] = METHODS,
    conformal: ConformalConfig | None = None,
    space: StateSpace | None = None,
    threads: int = 1,
) -> CoverageReport:
    """Coverage across countries when calibrating on data up to ``cutoff``.

    Countries without enough observations after the cutoff (or fewer than two
    before it) are dropped before any coverage is computed and listed in
    ``report.dropped``.  ``grid.replications`` and ``grid.calibration_length``
    are not used.
    """
    methods = _check_methods(methods)
    space = space or StateSpace(4)
    template = conformal or ConformalConfig()
    max_h = max(grid.horizons)
    usable, dropped = [], []
    for s in corpus:
        try:
            k = s.index_of(*cutoff)
        except KeyError:
            dropped.append((s.country_id, "cutoff_outside_series"))
            continue
        if len(s.states) - (k + 1) < max_h:
            dropped.append((s.country_id, "insufficient_post_cutoff"))
        elif k + 1 < 2:
            dropped.append((s.country_id, "insufficient_calibration"))
        else:
            usable.append((s, k))
    cells = _new_cells(methods, grid.horizons, grid.target_levels)
    for h_idx, H in enumerate(grid.horizons):

        def one(item, h_idx=h_idx, H=H):
            c_idx, (s, k) = item
            seeds = tuple(substream_seed(grid.seed, h_idx, c_idx, t) for t in (_CP, _LIKE, _USTAR))
            return _evaluate(
                s.states[: k + 1], s.states[k + 1 : k + 1 + H], H, grid.target_levels,
                methods, space, template, seeds,
            )

        for result in _map(one, list(enumerate(usable)), threads):
            _accumulate(cells, result, H, grid.target_levels)
    return CoverageReport(list(cells.values()), dropped)


@dataclass(frozen=True)
class ForecastResult:
    method: str
    prediction_set: ConformalPredictionSet | LikelihoodPredictionSet
    composition: Composition

    @property
    def sequences(self) -> np.ndarray:
        ps = self.prediction_set
        return ps.sequences if isinstance(ps, ConformalPredictionSet) else ps.members


def forward_forecast(
    series: LabeledSeries | Sequence[int],
    cfg: ConformalConfig,
    methods: Iterable[str] = METHODS,
    space: StateSpace | None = None,
) -> dict[str, ForecastResult]:
    """Prediction sets beyond the end of ``series``, calibrated on all of it."""
    methods = _check_methods(methods)
    states = series.states if isinstance(series, LabeledSeries) else np.asarray(series)
    space = space or StateSpace(4)
    out = {}
    if "conformal" in methods:
        ps = conformal_prediction_set(states, cfg, space)
        out["conformal"] = ForecastResult("conformal", ps, set_composition(ps))
    like = [m for m in methods if m.startswith("likelihood")]
    if like:
        ranked = rank_candidates(states, cfg.horizon, space, substream_seed(cfg.seed, _LIKE))
        for method in like:
            if method == "likelihood":
                ps = hdr_set(ranked, cfg.alpha)
            else:
                u = np.random.default_rng(substream_seed(cfg.seed, _USTAR)).random()
                ps = randomized_hdr_set(ranked, cfg.alpha, u)
            out[method] = ForecastResult(method, ps, ps.composition(space.m))
    return out


def composition_report(results: dict[str, ForecastResult]) -> CompositionReport:
    return CompositionReport({k: v.composition for k, v in results.items()})


def synthetic_corpus(
    P: TransitionMatrix,
    init: InitialDistribution,
    n_countries: int,
    n_months: int,
    seed: int,
    start: tuple[int, int] = (1990, 1),
    prefix: str = "C",
) -> list[LabeledSeries]:
    """Independent simulated state series with consecutive monthly timestamps."""
    k0 = month_index(*start)
    months = tuple(month_from_index(k0 + t) for t in range(n_months))
    width = len(str(n_countries))
    return [
        LabeledSeries(
            f"{prefix}{c:0{width}d}",
            months,
            simulate_chain(init, P, n_months, substream_seed(seed, c)),
        )
        for c in range(n_countries)
    ]

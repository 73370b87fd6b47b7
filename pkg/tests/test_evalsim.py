import csv

import numpy as np
import pytest

from markovcp.conformal import ConformalConfig
from markovcp.errors import InvalidInputError
from markovcp.evalsim import (
    COMPOSITION_COLUMNS,
    RELIABILITY_COLUMNS,
    ExperimentGrid,
    composition_report,
    expected_coverage_analytic,
    forward_forecast,
    run_backtest,
    run_simulation_study,
    synthetic_corpus,
)
from markovcp.ingest import LabeledSeries, clean_corpus, label_states, read_fatalities_csv
from markovcp.markov import InitialDistribution, StateSpace, TransitionMatrix, simulate_chain

STATIONARY_FROM_2 = np.array([0.6206, 0.0999, 0.1796, 0.0999])
FAST_CP = ConformalConfig(max_permutations=300)


def test_analytic_examples(chain):
    P, init = chain
    assert expected_coverage_analytic(P, init, 200) == pytest.approx(0.800, abs=5e-4)
    eye = TransitionMatrix(np.eye(3))
    assert expected_coverage_analytic(eye, InitialDistribution(np.array([0.2, 0.3, 0.5])), 17) == pytest.approx(1.0)
    half = TransitionMatrix(np.full((2, 2), 0.5))
    assert expected_coverage_analytic(half, InitialDistribution.point_mass(2, 1), 5) == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        expected_coverage_analytic(P, init, 0)


def test_analytic_hand_sum(chain):
    P, init = chain
    hand = 0.895 * 0.6206 + 0.500 * 0.0999 + 0.722 * 0.1796 + 0.653 * 0.0999
    assert expected_coverage_analytic(P, init, 200) == pytest.approx(hand, abs=5e-4)


def test_grid_validation():
    for bad in (dict(target_levels=(0.0,)), dict(target_levels=(1.2,)), dict(horizons=(0,)),
                dict(replications=0), dict(calibration_length=1), dict(target_levels=())):
        with pytest.raises(InvalidInputError):
            ExperimentGrid(**bad)
    with pytest.raises(InvalidInputError):
        run_simulation_study(*_eye2(), ExperimentGrid(replications=1), methods=["bogus"])


def _eye2():
    return TransitionMatrix(np.eye(2)), InitialDistribution.uniform(2)


def test_study_is_exact_and_reproducible(chain):
    P, init = chain
    grid = ExperimentGrid((0.5, 0.8, 1.0), (1, 2), 12, 60, seed=3)
    a = run_simulation_study(P, init, grid, conformal=FAST_CP)
    b = run_simulation_study(P, init, grid, conformal=FAST_CP, threads=3)
    assert [tuple(r) for r in a.rows()] == [tuple(r) for r in b.rows()]
    for c in a.cells:
        assert c.trials + c.failures == 12
        assert c.empirical_coverage == c.covered / c.trials
    assert all(a.cell("conformal", h, 1.0).empirical_coverage == 1.0 for h in (1, 2))
    c = run_simulation_study(P, init, ExperimentGrid((0.5, 0.8, 1.0), (1, 2), 12, 60, seed=4), conformal=FAST_CP)
    assert [tuple(r) for r in a.rows()] != [tuple(r) for r in c.rows()]


def test_failures_counted_not_fatal():
    # calibration of length 2 often ends in a state never left
    P = TransitionMatrix(np.full((2, 2), 0.5))
    grid = ExperimentGrid((0.5, 0.9), (1,), 40, 2, seed=1)
    rep = run_simulation_study(P, InitialDistribution.uniform(2), grid, conformal=FAST_CP)
    like = rep.cell("likelihood", 1, 0.5)
    assert like.failures > 0 and like.trials + like.failures == 40
    assert rep.cell("conformal", 1, 0.5).failures == 0


def test_report_csvs(tmp_path, chain):
    P, init = chain
    rep = run_simulation_study(P, init, ExperimentGrid((0.5, 0.9), (1,), 5, 30), ["likelihood"])
    rep.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == RELIABILITY_COLUMNS and len(rows) == 3
    with pytest.raises(KeyError):
        rep.cell("conformal", 1, 0.5)


def test_backtest_synthetic_corpus_calibrated(data_dir):
    corpus = [label_states(s) for s in read_fatalities_csv(data_dir / "synthetic_fatalities.csv")]
    kept, _ = clean_corpus(corpus)
    levels = (0.5, 0.7, 0.9)
    grid = ExperimentGrid(levels, (1, 2, 3, 4), seed=2)
    rep = run_backtest(kept, (2023, 12), grid, ["conformal"], ConformalConfig(max_permutations=500))
    assert rep.dropped == []
    for h in (1, 2, 3, 4):
        for v in levels:
            cell = rep.cell("conformal", h, v)
            assert cell.trials == len(kept)
            assert abs(cell.empirical_coverage - v) <= 0.12


def _unseen_transition_corpus():
    # calibration always leaves state 4 for state 1; half the countries then move 4 -> 2
    calib = [1, 1, 2, 3, 4, 1, 1, 2, 4, 1] * 3 + [1, 1, 2, 3, 3, 4]
    months = tuple((1990 + k // 12, k % 12 + 1) for k in range(len(calib) + 2))
    out = []
    for c in range(6):
        truth = [2, 3] if c % 2 else [1, 1]
        out.append(LabeledSeries(f"U{c}", months, np.array(calib + truth, dtype=np.int64)))
    return out, months[len(calib) - 1]


def test_backtest_endpoint_contrast():
    corpus, cutoff = _unseen_transition_corpus()
    grid = ExperimentGrid((1.0,), (1, 2), seed=5)
    rep = run_backtest(corpus, cutoff, grid, conformal=ConformalConfig(max_permutations=2000))
    for h in (1, 2):
        assert rep.cell("likelihood", h, 1.0).empirical_coverage == 0.5
        assert rep.cell("conformal", h, 1.0).empirical_coverage == 1.0


def test_backtest_drops_short_countries(chain):
    P, init = chain
    corpus = synthetic_corpus(P, init, 4, 60, 0)
    short = LabeledSeries("SHORT", corpus[0].months[:50], corpus[0].states[:50])
    rep = run_backtest(corpus + [short], corpus[0].months[47], ExperimentGrid((0.5,), (1, 3), seed=0), ["likelihood"])
    assert rep.dropped == [("SHORT", "insufficient_post_cutoff")]
    assert rep.cell("likelihood", 3, 0.5).trials + rep.cell("likelihood", 3, 0.5).failures == 4
    late = run_backtest(corpus, (2030, 1), ExperimentGrid((0.5,), (1,)), ["likelihood"])
    assert len(late.dropped) == 4


def _series_ending_in_two(chain, length):
    P, init = chain
    for seed in range(1000):
        seq = simulate_chain(init, P, length, seed)
        if seq[-1] == 2:
            months = tuple((1900 + k // 12, k % 12 + 1) for k in range(length))
            return LabeledSeries("SIM", months, seq)
    raise AssertionError("no series ending in state 2")


def test_forward_forecast_methods(chain):
    series = _series_ending_in_two(chain, 300)
    res = forward_forecast(series, ConformalConfig(alpha=0.2, horizon=3, max_permutations=300), ["likelihood", "conformal"])
    assert set(res) == {"conformal", "likelihood"}
    for r in res.values():
        assert r.sequences.shape[1] == 3
        np.testing.assert_allclose(r.composition.proportions.sum(axis=1), 1.0, atol=1e-9)
    assert res["conformal"].prediction_set.size >= res["likelihood"].prediction_set.size


def test_forward_forecast_constant_series_plus_one():
    months = tuple((1990 + k // 12, k % 12 + 1) for k in range(420))
    series = LabeledSeries("P", months, np.ones(420, dtype=np.int64))
    cfg = ConformalConfig(alpha=0.2, horizon=6, plus_one=True, plus_one_state=1, seed=1)
    res = forward_forecast(series, cfg, ["conformal"], StateSpace(4))
    assert res["conformal"].sequences.tolist() == [[1] * 6]


def test_likelihood_mass_converges_to_stationary(chain):
    series = _series_ending_in_two(chain, 5000)
    res = forward_forecast(series, ConformalConfig(alpha=0.2, horizon=12), ["likelihood"])
    r = res["likelihood"].prediction_set
    assert r.size > 0
    from markovcp.likelihood import hdr_set, rank_candidates

    full = hdr_set(rank_candidates(series.states, 12, StateSpace(4), 0), 0.0)
    np.testing.assert_allclose(full.composition(4, weighted=True).proportions[-1], STATIONARY_FROM_2, atol=0.05)


@pytest.mark.xfail(strict=True, reason="equal-weight HDR composition at step 12 is not the stationary law; see notes")
def test_likelihood_equal_weight_composition_near_stationary(chain):
    series = _series_ending_in_two(chain, 5000)
    res = forward_forecast(series, ConformalConfig(alpha=0.2, horizon=12), ["likelihood"])
    np.testing.assert_allclose(res["likelihood"].composition.proportions[-1], STATIONARY_FROM_2, atol=0.05)


@pytest.mark.slow
def test_conformal_long_horizon_more_diverse(chain):
    series = _series_ending_in_two(chain, 600)
    cfg = ConformalConfig(alpha=0.2, horizon=12, max_permutations=20, enumeration_cap=4**12)
    res = forward_forecast(series, cfg, ["conformal", "likelihood"])
    assert res["conformal"].composition.entropy(12) > res["likelihood"].composition.entropy(12)


def test_composition_report_csv(tmp_path, chain):
    series = _series_ending_in_two(chain, 200)
    res = forward_forecast(series, ConformalConfig(horizon=2, max_permutations=100), ["likelihood", "conformal"])
    rep = composition_report(res)
    rep.to_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert tuple(rows[0]) == COMPOSITION_COLUMNS
    assert len(rows) == 1 + 2 * 2 * 4

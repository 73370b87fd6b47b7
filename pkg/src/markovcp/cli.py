"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 resource cap exceeded, 3 I/O error.
Every command writes ``manifest.toml`` to its output directory; ``replay``
reruns a manifest.
"""

from __future__ import annotations

import argparse
import csv
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__, manifest
from ._kernels import BACKEND
from .conformal import DEFAULT_ENUMERATION_CAP, DEFAULT_MAX_PERMUTATIONS, SCORE_MODES, ConformalConfig
from .errors import InvalidInputError, ResourceCapError
from .evalsim import (
    DEFAULT_LEVELS,
    ExperimentGrid,
    composition_report,
    expected_coverage_analytic,
    forward_forecast,
    run_backtest,
    run_simulation_study,
)
from .ingest import (
    CONFLICT_SPACE,
    clean_corpus,
    derive_population_matrix,
    label_states,
    read_fatalities_csv,
    read_states_csv,
    write_exclusions_csv,
    write_states_csv,
)
from .markov import InitialDistribution, conflict_reference_chain, read_matrix_csv

EXIT_OK, EXIT_INVALID, EXIT_CAP, EXIT_IO = 0, 1, 2, 3

METHOD_NAMES = {"cp": "conformal", "like": "likelihood", "like-rand": "likelihood_randomized"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _methods(text) -> list[str]:
    names = text if isinstance(text, list) else [t.strip() for t in text.split(",") if t.strip()]
    out = []
    for name in names:
        if name == "all":
            out.extend(METHOD_NAMES.values())
        elif name in METHOD_NAMES:
            out.append(METHOD_NAMES[name])
        elif name in METHOD_NAMES.values():
            out.append(name)
        else:
            raise argparse.ArgumentTypeError(f"unknown method {name!r}")
    return [m for m in METHOD_NAMES.values() if m in out]


def _float_list(text) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _cutoff(text) -> list[int]:
    try:
        year, month = (int(t) for t in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoff must look like YYYY-MM, got {text!r}") from None
    if not 1 <= month <= 12:
        raise argparse.ArgumentTypeError(f"bad month in cutoff {text!r}")
    return [year, month]


def _add_common(p):
    p.add_argument("--seed", type=_seed, default=None, help="master seed; drawn and recorded if omitted")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _add_conformal(p):
    p.add_argument("--max-perms", type=int, default=DEFAULT_MAX_PERMUTATIONS,
                   help="permutations sampled per candidate (all are used when D! is smaller)")
    p.add_argument("--score-mode", choices=SCORE_MODES, default="one-step",
                   help="window probability from one-step transitions or j-step powers")
    p.add_argument("--plus-one", type=int, nargs="?", const=1, default=None, metavar="STATE",
                   help="append an artificial final state (1 when given without a value)")
    p.add_argument("--enumeration-cap", type=int, default=DEFAULT_ENUMERATION_CAP,
                   help="refuse to score more than this many candidate sequences")


def _add_grid(p, default_methods="all"):
    p.add_argument("--levels", type=_float_list, default=list(DEFAULT_LEVELS),
                   help="comma-separated target coverage levels 1-alpha")
    p.add_argument("--horizons", type=_int_list, default=[1, 2, 3, 4, 5, 6],
                   help="comma-separated forecast horizons")
    p.add_argument("--methods", type=_methods, default=_methods(default_methods),
                   help="comma-separated subset of cp,like,like-rand, or all")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="markovcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"markovcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = sub.choices

    p = sub.add_parser("ingest", help="label fatality counts and clean the corpus")
    p.add_argument("input", type=Path, help="CSV with country_id,year,month,fatalities")
    p.add_argument("--min-nonpeace", type=int, default=5,
                   help="drop countries with fewer non-peace months")
    p.add_argument("--max-peace-proportion", type=float, default=0.99,
                   help="drop countries whose peace share exceeds this")
    _add_common(p)

    p = sub.add_parser("forecast", help="prediction sets beyond the end of one country's series")
    p.add_argument("states", type=Path, help="states CSV written by ingest")
    p.add_argument("--country", required=True, help="country id to forecast")
    p.add_argument("--alpha", type=float, default=0.2, help="miscoverage level")
    p.add_argument("--horizon", type=int, default=6, help="months ahead")
    p.add_argument("--method", type=_methods, default=_methods("all"),
                   help="comma-separated subset of cp,like,like-rand, or all")
    _add_conformal(p)
    _add_common(p)

    for name, desc in (
        ("simulate", "coverage study on simulated chains, with the analytic one-step prediction"),
        ("reliability", "coverage study on simulated chains"),
    ):
        p = sub.add_parser(name, help=desc)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--true-matrix", type=Path, help="CSV matrix; defaults to the packaged conflict chain")
        src.add_argument("--derive-from", type=Path, help="states CSV to average into a population matrix")
        _add_grid(p)
        p.add_argument("--replications", type=int, default=500,
                       help="simulated chains per horizon")
        p.add_argument("--calibration-length", type=int, default=200,
                       help="observed months before the forecast horizon")
        _add_conformal(p)
        _add_common(p)

    p = sub.add_parser("backtest", help="coverage across countries after a cutoff month")
    p.add_argument("states", type=Path, help="states CSV written by ingest")
    p.add_argument("--cutoff", type=_cutoff, required=True, help="last calibration month, YYYY-MM")
    _add_grid(p)
    _add_conformal(p)
    _add_common(p)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest", type=Path, help="manifest.toml written by an earlier run")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _conformal_config(args, alpha=0.2, horizon=1, threads=1) -> ConformalConfig:
    return ConformalConfig(
        alpha=alpha,
        horizon=horizon,
        max_permutations=args.max_perms,
        score_mode=args.score_mode,
        plus_one=args.plus_one is not None,
        plus_one_state=args.plus_one if args.plus_one is not None else 1,
        seed=args.seed,
        enumeration_cap=args.enumeration_cap,
        threads=threads,
    )


def _path(p) -> str:
    return str(Path(p).resolve())


def cmd_ingest(args) -> dict:
    corpus = [label_states(s) for s in read_fatalities_csv(args.input)]
    kept, excluded = clean_corpus(corpus, args.min_nonpeace, args.max_peace_proportion)
    write_states_csv(args.out / "states.csv", kept)
    write_exclusions_csv(args.out / "exclusions.csv", excluded)
    print(f"{len(kept)} retained, {len(excluded)} excluded")
    return {"retained": len(kept), "excluded": len(excluded)}


def _find_country(path, country):
    for s in read_states_csv(path, CONFLICT_SPACE):
        if s.country_id == country:
            return s
    raise InvalidInputError(f"country {country!r} not found in {path}")


def cmd_forecast(args) -> dict:
    series = _find_country(args.states, args.country)
    if not 0 < args.alpha < 1:
        raise InvalidInputError("--alpha must lie in (0, 1)")
    cfg = _conformal_config(args, args.alpha, args.horizon, args.threads)
    results = forward_forecast(series, cfg, args.method, CONFLICT_SPACE)
    sizes = {}
    for method, res in results.items():
        ps = res.prediction_set
        if method == "conformal":
            p = ps.scores.p_values[ps.members]
            order = np.argsort(-p, kind="stable")
            rows = zip(ps.sequences[order], p[order])
        else:
            rows = zip(ps.members, ps.masses)
        with open(args.out / f"members_{method}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("rank", "sequence", "p_value_or_mass"))
            for rank, (seq, value) in enumerate(rows, 1):
                w.writerow((rank, ",".join(str(int(x)) for x in seq), repr(float(value))))
        sizes[method] = ps.size
        print(f"{method}: {ps.size} sequences")
    composition_report(results).to_csv(args.out / "composition.csv")
    return {f"size_{k}": v for k, v in sizes.items()}


def _study_matrix(args):
    if args.derive_from is not None:
        P, init = derive_population_matrix(read_states_csv(args.derive_from, CONFLICT_SPACE))
    elif args.true_matrix is not None:
        P = read_matrix_csv(args.true_matrix)
        init = InitialDistribution.uniform(P.m)
    else:
        P, init = conflict_reference_chain()
    return P, init


def _study(args, analytic: bool) -> dict:
    P, init = _study_matrix(args)
    grid = ExperimentGrid(args.levels, args.horizons, args.replications, args.calibration_length, args.seed)
    report = run_simulation_study(P, init, grid, args.methods, _conformal_config(args), args.threads)
    report.to_csv(args.out / "reliability.csv")
    report.cardinality_to_csv(args.out / "cardinality.csv")
    extra = {"matrix": [[float(v) for v in row] for row in P.probs]}
    if analytic:
        value = expected_coverage_analytic(P, init, grid.calibration_length)
        with open(args.out / "analytic.csv", "w", encoding="utf-8") as fh:
            fh.write("calibration_length,expected_one_step_modal_coverage\n")
            fh.write(f"{grid.calibration_length},{value!r}\n")
        extra["analytic_coverage"] = value
    print(f"{len(report.cells)} cells written")
    return extra


def cmd_simulate(args) -> dict:
    return _study(args, analytic=True)


def cmd_reliability(args) -> dict:
    return _study(args, analytic=False)


def cmd_backtest(args) -> dict:
    corpus = read_states_csv(args.states, CONFLICT_SPACE)
    grid = ExperimentGrid(args.levels, args.horizons, seed=args.seed)
    report = run_backtest(
        corpus, tuple(args.cutoff), grid, args.methods, _conformal_config(args), CONFLICT_SPACE, args.threads
    )
    report.to_csv(args.out / "reliability.csv")
    with open(args.out / "dropped.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("country_id", "reason"))
        w.writerows(report.dropped)
    print(f"{len(corpus) - len(report.dropped)} countries evaluated, {len(report.dropped)} dropped")
    return {"evaluated": len(corpus) - len(report.dropped), "dropped": len(report.dropped)}


COMMANDS = {
    "ingest": cmd_ingest,
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "reliability": cmd_reliability,
    "backtest": cmd_backtest,
}
_PATH_ARGS = ("input", "states", "true_matrix", "derive_from")


def _recorded_args(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("command", "out", "seed"):
            continue
        if k in _PATH_ARGS and v is not None:
            v = _path(v)
        out[k] = v
    return out


def _execute(command: str, args, seed_source: str) -> None:
    if args.threads < 1:
        raise InvalidInputError("--threads must be >= 1")
    args.out.mkdir(parents=True, exist_ok=True)
    extra = COMMANDS[command](args)
    manifest.write(
        args.out / manifest.MANIFEST_NAME,
        {
            "tool": "markovcp",
            "version": __version__,
            "command": command,
            "seed": args.seed,
            "seed_source": seed_source,
            "backend": BACKEND,
        },
        {"args": _recorded_args(args), "results": extra},
    )


def _replay(args) -> None:
    record = manifest.read(args.manifest)
    command = record.get("command")
    if command not in COMMANDS or "seed" not in record:
        raise InvalidInputError(f"{args.manifest}: not a markovcp run manifest")
    # unset options are not written to the manifest; start from the defaults
    sub = build_parser().commands[command]
    ns = argparse.Namespace(**{a.dest: a.default for a in sub._actions if a.dest != "help"})
    for k, v in record.get("args", {}).items():
        setattr(ns, k, v)
    for k in _PATH_ARGS:
        if getattr(ns, k, None) is not None:
            setattr(ns, k, Path(getattr(ns, k)))
    ns.out = args.out
    ns.seed = int(record["seed"])
    _execute(command, ns, record.get("seed_source", "flag"))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        if args.command == "replay":
            _replay(args)
        else:
            source = "flag"
            if args.seed is None:
                args.seed = secrets.randbits(64)
                source = "drawn"
            _execute(args.command, args, source)
    except ResourceCapError as exc:
        print(f"markovcp: resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InvalidInputError as exc:
        print(f"markovcp: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"markovcp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

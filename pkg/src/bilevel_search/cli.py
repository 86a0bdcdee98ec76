"""Command-line entry point: ``run``, ``ablate``, ``report``, ``plot``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import SearchError
from .evaluator import load_landscape, with_noise
from .harness import (
    GROUPS,
    GroupResult,
    atomic_write,
    emit_convergence,
    load_results,
    make_researcher,
    plot_series,
    results_json,
    run_ablation,
    run_repeat,
    summary_table,
    write_repeat,
)
from .inner import BudgetSpec
from .proposer import ExternalProposer, ScriptedProposer
from .space import load_space
from .wire import WireClient, load_wire_config

EXIT_CONFIG = 2
EXIT_IO = 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget-T", dest="T", type=int, default=30, help="inner iterations per repeat")
    p.add_argument("--budget-K", dest="K", type=int, default=5, help="iterations per outer cycle")
    p.add_argument("--budget-M", dest="M", type=int, default=2, help="outer cycles per research session")
    p.add_argument("--landscape", type=Path, help="landscape file (key = value lines)")
    p.add_argument("--space", type=Path, help="parameter-space file (key = value lines)")
    p.add_argument("--noise-sigma", type=float, help="override the landscape's per-trial noise")
    p.add_argument("--proposer", choices=("scripted", "external"), default="scripted")
    p.add_argument("--researcher", choices=("catalog", "external", "fail-all"), default="catalog")
    p.add_argument("--wire-config", type=Path, help="endpoint/model/timeout/retries file for external backends")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-search", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single repeat")
    run.add_argument("--group", choices=sorted(GROUPS), required=True)
    run.add_argument("--seed", type=int, default=0)
    _common(run)

    ablate = sub.add_parser("ablate", help="run every group for several seeds")
    ablate.add_argument("--groups", default="ABCD", help="group ids, e.g. ABCD or A,C")
    ablate.add_argument("--repeats", type=int, default=10)
    ablate.add_argument("--base-seed", type=int, default=0)
    ablate.add_argument("--plot", action="store_true", help="also render convergence.png")
    _common(ablate)

    report = sub.add_parser("report", help="print the summary table of an ablation directory")
    report.add_argument("--in", dest="in_dir", type=Path, required=True)

    plot = sub.add_parser("plot", help="render running-minimum curves of an ablation directory")
    plot.add_argument("--in", dest="in_dir", type=Path, required=True)
    plot.add_argument("--output", type=Path, help="PNG path (default: <in>/convergence.png)")
    return parser


def _setup(args):
    space = load_space(args.space)
    landscape = with_noise(load_landscape(args.landscape), args.noise_sigma)
    budgets = BudgetSpec(args.T, args.K, args.M)
    wire = load_wire_config(args.wire_config) if args.wire_config or "external" in (args.proposer, args.researcher) else None

    def proposer_factory():
        if args.proposer == "external":
            return ExternalProposer(WireClient(wire), space)
        return ScriptedProposer(space=space)

    def researcher_factory():
        return make_researcher(args.researcher, wire)

    return space, landscape, budgets, proposer_factory, researcher_factory


def cmd_run(args) -> int:
    space, landscape, budgets, proposer_factory, researcher_factory = _setup(args)
    result = run_repeat(args.group, args.seed, budgets, landscape, space=space,
                        proposer=proposer_factory(), researcher=researcher_factory())
    write_repeat(result, args.out)
    group = GroupResult(args.group, [result])
    emit_convergence([group], args.out)
    atomic_write(args.out / "results.json", json.dumps(results_json([group]), indent=2, sort_keys=True) + "\n")
    print(f"group {result.group} seed {result.seed}: baseline {result.baseline:.6f} "
          f"best {result.best:.6f} delta {result.delta:+.6f}")
    return 0


def cmd_ablate(args) -> int:
    groups = [g for g in args.groups.replace(",", "").upper()]
    unknown = [g for g in groups if g not in GROUPS]
    if unknown or not groups:
        raise ValueError(f"unknown groups {unknown}; choose from {sorted(GROUPS)}")
    space, landscape, budgets, proposer_factory, researcher_factory = _setup(args)
    results = run_ablation(groups, args.repeats, args.base_seed, budgets, landscape, args.out, space=space,
                           proposer_factory=proposer_factory, researcher_factory=researcher_factory,
                           plot=args.plot)
    sys.stdout.write(summary_table(results))
    return 0


def cmd_report(args) -> int:
    sys.stdout.write(summary_table(load_results(args.in_dir)))
    return 0


def cmd_plot(args) -> int:
    out = plot_series(args.in_dir / "series", args.output or args.in_dir / "convergence.png")
    print(out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "ablate": cmd_ablate, "report": cmd_report, "plot": cmd_plot}
    try:
        return handlers[args.command](args)
    except (SearchError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

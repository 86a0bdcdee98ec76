"""Four-group ablation driver.

Group A runs the bare hill climber, B adds the strategy level, C adds strategy
and mechanism research, D adds mechanism research only. Each repeat starts
from the baseline with fresh mechanism and strategy state.
"""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .evaluator import LandscapeSpec, RepeatContext, SurrogateEvaluator, TrialRecord
from .inner import BudgetSpec, run_inner_block, start_run
from .meta import (
    PASSED,
    SESSION_SECONDS,
    CatalogResearcher,
    FailAllResearcher,
    activate_or_revert,
    run_session,
    validate_artifact,
)
from .proposer import ScriptedProposer
from .space import ParameterSpace, default_space
from .strategy import StrategyPolicy, initial_search_config, running_best, update_search_config


@dataclass(frozen=True)
class GroupSpec:
    id: str
    strategy_enabled: bool
    meta_enabled: bool


GROUPS = {
    "A": GroupSpec("A", False, False),
    "B": GroupSpec("B", True, False),
    "C": GroupSpec("C", True, True),
    "D": GroupSpec("D", False, True),
}


@dataclass
class RepeatResult:
    group: str
    repeat_index: int
    seed: int
    baseline: float
    best: float
    trace: tuple[TrialRecord, ...]
    events: list[dict[str, Any]] = field(default_factory=list)
    meta_seconds: float = 0.0
    trace_path: str | None = None

    @property
    def delta(self) -> float:
        return self.best - self.baseline

    @property
    def run_name(self) -> str:
        return f"{self.group}_seed{self.seed}"

    @property
    def sessions(self) -> list[dict[str, Any]]:
        return [e for e in self.events if e["type"] == "session"]

    def running_min(self) -> list[float]:
        return running_best(self.trace)

    def trace_text(self) -> str:
        return "".join(rec.to_line() + "\n" for rec in self.trace)

    def to_json(self) -> dict[str, Any]:
        return {
            "group": self.group,
            "repeat_index": self.repeat_index,
            "seed": self.seed,
            "baseline": self.baseline,
            "best": self.best,
            "delta": self.delta,
            "trace_path": self.trace_path,
            "meta_seconds": self.meta_seconds,
            "mechanism_events": [
                {k: e[k] for k in ("after_iteration", "identity", "validation", "activated")} for e in self.sessions
            ],
        }


@dataclass
class GroupResult:
    group: str
    repeats: list[RepeatResult]

    @property
    def deltas(self) -> list[float]:
        return [r.delta for r in self.repeats]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.deltas)

    @property
    def std(self) -> float:
        return statistics.stdev(self.deltas) if len(self.deltas) > 1 else 0.0

    @property
    def mean_abs(self) -> float:
        return statistics.fmean(abs(d) for d in self.deltas)


def make_researcher(kind: str, wire_config=None):
    if kind == "catalog":
        return CatalogResearcher()
    if kind == "fail-all":
        return FailAllResearcher()
    if kind == "external":
        from .meta import ExternalResearcher
        from .wire import WireClient, load_wire_config

        return ExternalResearcher(WireClient(wire_config or load_wire_config()))
    raise ValueError(f"unknown researcher {kind!r}")


def run_repeat(
    group: GroupSpec | str,
    seed: int,
    budgets: BudgetSpec | None = None,
    landscape: LandscapeSpec | None = None,
    *,
    repeat_index: int = 0,
    space: ParameterSpace | None = None,
    proposer=None,
    researcher=None,
    policy: StrategyPolicy | None = None,
    evaluator=None,
) -> RepeatResult:
    """Run one repeat: baseline trial, then outer cycles of K steps with strategy and research hooks."""
    group = GROUPS[group] if isinstance(group, str) else group
    budgets = budgets or BudgetSpec()
    landscape = landscape or LandscapeSpec()
    space = space if space is not None else default_space()
    proposer = proposer if proposer is not None else ScriptedProposer(space=space)
    researcher = researcher if researcher is not None else CatalogResearcher()
    policy = policy or StrategyPolicy(enabled=group.strategy_enabled)
    if evaluator is None:
        evaluator = SurrogateEvaluator(landscape, RepeatContext.draw(landscape, seed), space)

    state = start_run(evaluator, budgets, space, initial_search_config(space))
    baseline = state.best_val
    events: list[dict[str, Any]] = []
    meta_seconds = 0.0
    outer_cycle = 0
    while state.iteration < budgets.T:
        state = run_inner_block(state, proposer, evaluator, min(budgets.K, budgets.T - state.iteration))
        if group.strategy_enabled:
            state = replace(state, search_config=update_search_config(state.trace, state.search_config, policy, space))
        outer_cycle += 1
        events.append({
            "type": "cycle",
            "outer_cycle": outer_cycle,
            "after_iteration": state.iteration,
            "best_val": state.best_val,
            "search_config": state.search_config.to_json(),
            "mechanisms": state.mechanism_stack.snapshot(),
        })
        if group.meta_enabled and outer_cycle % budgets.M == 0:
            session_id = f"{group.id}-s{seed}-c{outer_cycle}"
            artifact, transcript = run_session(state.trace, state.mechanism_stack, researcher, session_id)
            artifact = validate_artifact(artifact, space)
            stack = activate_or_revert(state.mechanism_stack, artifact, state.trace, space)
            state = replace(state, mechanism_stack=stack)
            meta_seconds += SESSION_SECONDS
            events.append({
                "type": "session",
                "outer_cycle": outer_cycle,
                "after_iteration": state.iteration,
                "identity": artifact.identity,
                "validation": artifact.validation,
                "activated": artifact.validation == PASSED,
                "artifact": artifact.to_json(),
                "transcript": transcript.to_json(),
                "stack": list(stack.identities()),
                "wall_seconds": SESSION_SECONDS,
            })
    return RepeatResult(group.id, repeat_index, seed, baseline, state.best_val, state.trace, events, meta_seconds)


# -- output --------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_repeat(result: RepeatResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    trace_path = out_dir / "traces" / f"{result.run_name}.jsonl"
    atomic_write(trace_path, result.trace_text())
    result.trace_path = str(trace_path.relative_to(out_dir))
    atomic_write(out_dir / "events" / f"{result.run_name}.jsonl",
                 "".join(json.dumps(e, sort_keys=True) + "\n" for e in result.events))


def series_text(result: RepeatResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "running_min_val_bpb"])
    for rec, best in zip(result.trace, result.running_min()):
        w.writerow([rec.iteration, repr(best)])
    return buf.getvalue()


def emit_convergence(results: Sequence[GroupResult], out_dir: Path, plot: bool = False) -> list[Path]:
    """One running-minimum series per run plus a per-group mean summary; optional PNG."""
    if not results or not any(g.repeats for g in results):
        raise ValueError("no results to emit")
    series_dir = Path(out_dir) / "series"
    written = []
    rows = []
    for g in results:
        curves = []
        for r in g.repeats:
            path = series_dir / f"{r.run_name}.csv"
            atomic_write(path, series_text(r))
            written.append(path)
            curves.append(r.running_min())
        length = min(len(c) for c in curves)
        for i in range(length):
            rows.append([g.group, i, repr(statistics.fmean(c[i] for c in curves))])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "iteration", "mean_running_min_val_bpb"])
    w.writerows(rows)
    summary = series_dir / "summary.csv"
    atomic_write(summary, buf.getvalue())
    written.append(summary)
    if plot:
        written.append(plot_series(series_dir, Path(out_dir) / "convergence.png"))
    return written


def read_series(series_dir: Path) -> dict[str, list[tuple[int, float]]]:
    out = {}
    for path in sorted(Path(series_dir).glob("*_seed*.csv")):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out[path.stem] = [(int(r["iteration"]), float(r["running_min_val_bpb"])) for r in rows]
    if not out:
        raise FileNotFoundError(f"no series files in {series_dir}")
    return out


def plot_series(series_dir: Path, out_path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = read_series(series_dir)
    colors = {"A": "tab:gray", "B": "tab:orange", "C": "tab:green", "D": "tab:blue"}
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_group: dict[str, list[list[float]]] = {}
    for name, points in series.items():
        group = name.split("_", 1)[0]
        xs, ys = zip(*points)
        ax.plot(xs, ys, color=colors.get(group, "black"), lw=0.6, alpha=0.5)
        by_group.setdefault(group, []).append(list(ys))
    for group, curves in sorted(by_group.items()):
        n = min(len(c) for c in curves)
        mean = [statistics.fmean(c[i] for c in curves) for i in range(n)]
        ax.plot(range(n), mean, color=colors.get(group, "black"), lw=2.5, label=f"Group {group}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("running-min val_bpb")
    ax.legend()
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return out_path


def summary_table(results: Sequence[GroupResult]) -> str:
    width = max(len(g.repeats) for g in results)
    head = ["group"] + [f"R{i + 1}" for i in range(width)] + ["mean +/- std"]
    lines = ["  ".join(f"{h:>10}" for h in head)]
    for g in results:
        cells = [f"{g.group:>10}"] + [f"{d:>+10.6f}" for d in g.deltas]
        cells += [" " * 10] * (width - len(g.deltas))
        cells.append(f"{g.mean:+.6f} +/- {g.std:.6f}")
        lines.append("  ".join(cells))
    by_id = {g.group: g for g in results}
    if "A" in by_id and by_id["A"].mean_abs > 0:
        for other in ("B", "C", "D"):
            if other in by_id:
                ratio = by_id[other].mean_abs / by_id["A"].mean_abs
                lines.append(f"mean|delta_{other}| / mean|delta_A| = {ratio:.3f}")
    return "\n".join(lines) + "\n"


def results_json(results: Sequence[GroupResult]) -> dict[str, Any]:
    return {
        "groups": [
            {"group": g.group, "mean": g.mean, "std": g.std, "repeats": [r.to_json() for r in g.repeats]}
            for g in results
        ]
    }


def load_results(out_dir: Path) -> list[GroupResult]:
    """Rebuild summary-level results (no traces) from ``results.json``."""
    data = json.loads((Path(out_dir) / "results.json").read_text())
    groups = []
    for g in data["groups"]:
        reps = [RepeatResult(r["group"], r["repeat_index"], r["seed"], r["baseline"], r["best"], (),
                             meta_seconds=r["meta_seconds"], trace_path=r["trace_path"]) for r in g["repeats"]]
        groups.append(GroupResult(g["group"], reps))
    return groups


def run_ablation(
    groups: Iterable[str] = "ABCD",
    repeats_per_group: int = 10,
    base_seed: int = 0,
    budgets: BudgetSpec | None = None,
    landscape: LandscapeSpec | None = None,
    out_dir: str | Path | None = None,
    *,
    space: ParameterSpace | None = None,
    proposer_factory: Callable[[], Any] | None = None,
    researcher_factory: Callable[[], Any] | None = None,
    plot: bool = False,
) -> list[GroupResult]:
    if repeats_per_group < 1:
        raise ValueError("repeats_per_group must be >= 1")
    space = space if space is not None else default_space()
    researcher_factory = researcher_factory or CatalogResearcher
    results = []
    for gid in groups:
        reps = []
        for r in range(repeats_per_group):
            proposer = proposer_factory() if proposer_factory else None
            res = run_repeat(GROUPS[gid], base_seed + r, budgets, landscape, repeat_index=r, space=space,
                             proposer=proposer, researcher=researcher_factory())
            reps.append(res)
        results.append(GroupResult(gid, reps))
    if out_dir is not None:
        out = Path(out_dir)
        for g in results:
            for r in g.repeats:
                write_repeat(r, out)
        emit_convergence(results, out, plot=plot)
        atomic_write(out / "results.json", json.dumps(results_json(results), indent=2, sort_keys=True) + "\n")
        atomic_write(out / "summary.txt", summary_table(results))
    return results

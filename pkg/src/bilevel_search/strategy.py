"""Strategy level: freeze/unfreeze parameters and order the proposer's attention.

Runs every outer cycle over the full trace. It can narrow or redirect what the
proposer touches, but never changes how proposals are generated or accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .evaluator import TrialRecord
from .space import ParameterSpace, default_space


@dataclass(frozen=True)
class SearchConfig:
    frozen: frozenset[str] = frozenset()
    guidance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        object.__setattr__(self, "guidance", tuple(self.guidance))
        overlap = self.frozen.intersection(self.guidance)
        if overlap:
            raise ValueError(f"guidance lists frozen parameters: {sorted(overlap)}")

    def to_json(self) -> dict:
        return {"frozen": sorted(self.frozen), "guidance": list(self.guidance)}


@dataclass(frozen=True)
class StrategyPolicy:
    k: int = 3
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("freeze threshold k must be >= 1")


def initial_search_config(space: ParameterSpace | None = None) -> SearchConfig:
    """Nothing frozen, guidance in declaration order. Also the fixed config when strategy is off."""
    space = space if space is not None else default_space()
    return SearchConfig(frozenset(), tuple(space.editable()))


def running_best(trace: Sequence[TrialRecord]) -> list[float]:
    """Best val_bpb after each record (rejected trials carry the previous best)."""
    out: list[float] = []
    best = float("inf")
    for rec in trace:
        if rec.val_bpb is not None and rec.val_bpb < best:
            best = rec.val_bpb
        out.append(best)
    return out


def attribution(trace: Sequence[TrialRecord], parameter: str) -> tuple[int, float]:
    """Return ``(proposal_count, net_improvement)`` for one parameter.

    A trial improving the best by ``d`` credits ``d`` to every parameter it touched.
    """
    count = 0
    net = 0.0
    best = running_best(trace)
    for i, rec in enumerate(trace):
        if rec.proposal is None or not rec.proposal.touches(parameter):
            continue
        count += 1
        before = best[i - 1] if i > 0 else float("inf")
        if before != float("inf"):
            net += max(0.0, before - best[i])
    return count, net


def region_start(trace: Sequence[TrialRecord]) -> int:
    """Iteration from which the current search region begins.

    The region moves on a kept trial (start = the trial after it) and when the
    active mechanism stack changes (start = the first trial under the new stack).
    """
    start = 1
    prev_mechs: tuple[str, ...] | None = None
    for rec in trace:
        if prev_mechs is not None and rec.mechanisms != prev_mechs:
            start = max(start, rec.iteration)
        prev_mechs = rec.mechanisms
        if rec.kept and rec.proposal is not None:
            start = max(start, rec.iteration + 1)
    return start


def update_search_config(
    trace: Sequence[TrialRecord],
    current: SearchConfig,
    policy: StrategyPolicy,
    space: ParameterSpace | None = None,
) -> SearchConfig:
    space = space if space is not None else default_space()
    if not policy.enabled:
        return current
    editable = space.editable()
    start = region_start(trace)
    touched_in_region = {
        name
        for rec in trace
        if rec.iteration >= start and rec.proposal is not None
        for name in rec.proposal.changes
    }
    stats = {name: attribution(trace, name) for name in editable}

    futile = {name for name, (count, net) in stats.items() if count >= policy.k and net == 0.0}
    stale = {name for name in editable if name not in touched_in_region}
    frozen = (set(current.frozen) | futile) - stale
    frozen &= set(editable)

    order = {name: i for i, name in enumerate(editable)}
    guidance = sorted((n for n in editable if n not in frozen), key=lambda n: (stats[n][0], order[n]))
    return SearchConfig(frozenset(frozen), tuple(guidance))

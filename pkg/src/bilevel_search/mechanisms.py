"""Injectable search mechanisms and the proposal-mediation hook.

A mechanism either *filters* candidates (tabu list: veto and ask for the next
one) or *redirects* them (bandit, orthogonal coverage: pick the parameter and
direction themselves and ask the proposer for a concrete value). Redirectors
run in stack order, the last one wins; filters always judge the final stream,
so a vetoed move can never slip in behind a redirector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import islice
from typing import Any, Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import EmptyArms, EmptyEligible, NoProposalAvailable, UnknownArm
from .evaluator import DECREASE, INCREASE, TrialRecord
from .space import REAL, ParameterSpace, Proposal, default_space

RETRY_BOUND = 10


# -- tabu list -----------------------------------------------------------------


@dataclass
class TabuEntry:
    fragment: dict[str, Any]
    expires_at: int


@dataclass
class TabuState:
    tabu_list: list[TabuEntry] = field(default_factory=list)
    tenure: int = 5
    distance_thresholds: dict[str, float] = field(default_factory=dict)


def is_tabu(config: Mapping[str, Any], iteration: int, state: TabuState) -> bool:
    """Expire old entries, then report whether ``config`` is too close to a live one.

    ``config`` is usually a proposal's change set. An entry matches when any
    parameter it shares with ``config`` lies within that parameter's distance
    threshold (numeric) or is equal (otherwise).
    """
    state.tabu_list = [e for e in state.tabu_list if iteration <= e.expires_at]
    for entry in state.tabu_list:
        for param, tabu_val in entry.fragment.items():
            if param not in config:
                continue
            value = config[param]
            if _numeric(value) and _numeric(tabu_val):
                if abs(float(value) - float(tabu_val)) <= state.distance_thresholds.get(param, 0.0):
                    return True
            elif value == tabu_val:
                return True
    return False


def _numeric(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def tabu_record(proposal: Proposal, iteration: int, state: TabuState) -> TabuState:
    state.tabu_list.append(TabuEntry(dict(proposal.changes), iteration + state.tenure))
    return state


def default_thresholds(space: ParameterSpace) -> dict[str, float]:
    """5% of the domain width for reals, exact match for everything else."""
    return {s.name: 0.05 * (s.high - s.low) if s.kind == REAL else 0.0 for s in space}


# -- UCB1 bandit ---------------------------------------------------------------


class Arm(NamedTuple):
    parameter: str
    direction: str
    scale: str


@dataclass
class BanditState:
    arms: list[Arm]
    counts: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    exploration: float = math.sqrt(2)

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * len(self.arms)
        if not self.rewards:
            self.rewards = [0.0] * len(self.arms)
        if not len(self.arms) == len(self.counts) == len(self.rewards):
            raise ValueError("arms, counts and rewards must align")


def ucb_score(state: BanditState, index: int) -> float:
    n = state.counts[index]
    if n == 0:
        return math.inf
    total = sum(state.counts)
    return state.rewards[index] / n + state.exploration * math.sqrt(math.log(total) / n)


def bandit_ranking(state: BanditState, eligible: Iterable[int] | None = None) -> list[int]:
    """Arm indices by descending UCB score, ties to the lower index."""
    pool = range(len(state.arms)) if eligible is None else eligible
    return sorted(pool, key=lambda i: (-ucb_score(state, i), i))


def bandit_select(state: BanditState, eligible: Iterable[int] | None = None) -> Arm:
    ranking = bandit_ranking(state, eligible)
    if not ranking:
        raise EmptyArms("no arms to select from")
    return state.arms[ranking[0]]


def bandit_update(state: BanditState, arm: Arm | int, improvement: float) -> BanditState:
    index = arm if isinstance(arm, int) else _arm_index(state, arm)
    if not 0 <= index < len(state.arms):
        raise UnknownArm(f"no arm {arm!r}")
    state.counts[index] += 1
    state.rewards[index] += max(0.0, improvement)
    return state


def _arm_index(state: BanditState, arm: Arm) -> int:
    try:
        return state.arms.index(arm)
    except ValueError:
        raise UnknownArm(f"no arm {arm!r}") from None


# -- orthogonal coverage -------------------------------------------------------


@dataclass
class CoverageState:
    matrix: dict[tuple[str, str], int] = field(default_factory=dict)


def orthogonal_next(state: CoverageState, eligible: Sequence[tuple[str, str]]) -> tuple[str, str]:
    """Least-visited cell; ties keep the order of ``eligible``."""
    if not eligible:
        raise EmptyEligible("no eligible (parameter, direction) cells")
    return min(eligible, key=lambda cell: state.matrix.get(cell, 0))


def coverage_cells(space: ParameterSpace, frozen: Iterable[str] = ()) -> list[tuple[str, str]]:
    """Editable, unfrozen cells in declaration order, decrease before increase."""
    frozen = set(frozen)
    return [(name, d) for name in space.editable() if name not in frozen for d in (DECREASE, INCREASE)]


# -- mechanism instances -------------------------------------------------------


class Mechanism:
    identity = ""
    role = ""  # "filter" or "redirect"

    def __init__(self, **parameters: Any):
        self.parameters = parameters
        self.space: ParameterSpace = default_space()

    def attach(self, trace: Sequence[TrialRecord], space: ParameterSpace) -> None:
        self.space = space

    def observe(self, record: TrialRecord, improvement: float) -> None:
        pass

    def vetoes(self, proposal: Proposal, ctx) -> bool:
        return False

    def redirect(self, stream: Iterator[Proposal], ctx, proposer) -> Iterator[Proposal]:
        return stream

    def summary(self) -> dict[str, Any]:
        return {}

    def snapshot(self) -> dict[str, Any]:
        return {"identity": self.identity, "parameters": _jsonable(self.parameters), "summary": self.summary()}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.parameters!r})"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class TabuSearch(Mechanism):
    """Blocks re-proposing recently evaluated moves for ``tenure`` iterations."""

    identity = "tabu"
    role = "filter"

    def __init__(self, tenure: int = 5, thresholds: Mapping[str, float] | None = None):
        super().__init__(tenure=tenure, thresholds=dict(thresholds or {}))
        self.state = TabuState(tenure=tenure)

    def attach(self, trace: Sequence[TrialRecord], space: ParameterSpace) -> None:
        super().attach(trace, space)
        thresholds = default_thresholds(space)
        thresholds.update(self.parameters["thresholds"])
        self.state.distance_thresholds = thresholds
        # seed with history so a move tried just before activation is already blocked
        for rec in trace:
            if rec.proposal is not None and rec.evaluated:
                tabu_record(rec.proposal, rec.iteration, self.state)

    def vetoes(self, proposal: Proposal, ctx) -> bool:
        return is_tabu(proposal.changes, ctx.iteration, self.state)

    def observe(self, record: TrialRecord, improvement: float) -> None:
        if record.proposal is not None and record.evaluated:
            tabu_record(record.proposal, record.iteration, self.state)

    def summary(self) -> dict[str, Any]:
        return {
            "entries": len(self.state.tabu_list),
            "live": [{"fragment": _jsonable(e.fragment), "expires_at": e.expires_at} for e in self.state.tabu_list],
        }


class MultiScaleBandit(Mechanism):
    """UCB1 over (parameter, direction, step scale) arms."""

    identity = "bandit"
    role = "redirect"

    def __init__(self, exploration: float = math.sqrt(2)):
        super().__init__(exploration=exploration)
        self.state = BanditState(arms=[], exploration=exploration)

    def attach(self, trace: Sequence[TrialRecord], space: ParameterSpace) -> None:
        super().attach(trace, space)
        arms = [Arm(p, d, s) for p in space.editable() for d in (INCREASE, DECREASE) for s in ("small", "large")]
        self.state = BanditState(arms=arms, exploration=self.parameters["exploration"])

    def redirect(self, stream, ctx, proposer):
        blocked = set(ctx.search_config.frozen)
        eligible = [i for i, a in enumerate(self.state.arms) if a.parameter not in blocked]
        for i in bandit_ranking(self.state, eligible):
            arm = self.state.arms[i]
            p = proposer.instantiate(ctx, arm.parameter, arm.direction, arm.scale)
            yield Proposal(p.changes, p.hypothesis, origin=f"bandit:{i}", clamped=p.clamped)

    def observe(self, record: TrialRecord, improvement: float) -> None:
        origin = record.proposal.origin if record.proposal is not None else ""
        if origin.startswith("bandit:"):
            bandit_update(self.state, int(origin.split(":", 1)[1]), improvement)

    def summary(self) -> dict[str, Any]:
        return {"pulls": sum(self.state.counts), "counts": list(self.state.counts),
                "rewards": [round(r, 12) for r in self.state.rewards]}


class OrthogonalExploration(Mechanism):
    """Always moves the least-explored (parameter, direction) cell."""

    identity = "orthogonal"
    role = "redirect"

    def __init__(self, scale: str = "small"):
        super().__init__(scale=scale)
        self.state = CoverageState()

    def redirect(self, stream, ctx, proposer):
        cells = coverage_cells(ctx.space, ctx.search_config.frozen)
        order = {cell: i for i, cell in enumerate(cells)}
        for cell in sorted(cells, key=lambda c: (self.state.matrix.get(c, 0), order[c])):
            p = proposer.instantiate(ctx, cell[0], cell[1], self.parameters["scale"])
            yield Proposal(p.changes, p.hypothesis, origin=f"orthogonal:{cell[0]}:{cell[1]}", clamped=p.clamped)

    def observe(self, record: TrialRecord, improvement: float) -> None:
        origin = record.proposal.origin if record.proposal is not None else ""
        if origin.startswith("orthogonal:"):
            _, param, direction = origin.split(":")
            cell = (param, direction)
            self.state.matrix[cell] = self.state.matrix.get(cell, 0) + 1

    def summary(self) -> dict[str, Any]:
        return {"coverage": {f"{p}/{d}": n for (p, d), n in sorted(self.state.matrix.items())}}


@dataclass(frozen=True)
class MechanismStack:
    active: tuple[Mechanism, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", tuple(self.active))
        ids = self.identities()
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate mechanism identities: {ids}")

    def identities(self) -> tuple[str, ...]:
        return tuple(m.identity for m in self.active)

    def with_mechanism(self, mechanism: Mechanism) -> MechanismStack:
        kept = tuple(m for m in self.active if m.identity != mechanism.identity)
        return MechanismStack(kept + (mechanism,))

    def observe(self, record: TrialRecord, improvement: float) -> None:
        for m in self.active:
            m.observe(record, improvement)

    def snapshot(self) -> list[dict[str, Any]]:
        return [m.snapshot() for m in self.active]


def mediate(proposer, ctx, stack: MechanismStack, retry_bound: int = RETRY_BOUND) -> Proposal:
    """Pass the proposer's candidates through the active mechanisms.

    Returns the first candidate no filter vetoes. After ``retry_bound`` vetoes
    the last candidate examined is passed through with ``forced=True``.
    """
    stream: Iterator[Proposal] = iter(proposer.candidates(ctx))
    for m in stack.active:
        if m.role == "redirect":
            stream = iter(m.redirect(stream, ctx, proposer))
    filters = [m for m in stack.active if m.role == "filter"]
    last = None
    for cand in islice(stream, retry_bound + 1):
        last = cand
        if not any(f.vetoes(cand, ctx) for f in filters):
            return cand
    if last is None:
        raise NoProposalAvailable("no candidate proposals")
    return Proposal(last.changes, last.hypothesis, origin=last.origin, clamped=last.clamped, forced=True)


# -- catalog -------------------------------------------------------------------


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_tabu(params: Mapping[str, Any]) -> str | None:
    tenure = params.get("tenure", 5)
    if not _is_int(tenure) or tenure < 1:
        return "tenure must be an integer >= 1"
    thresholds = params.get("thresholds", {}) or {}
    if not isinstance(thresholds, Mapping):
        return "thresholds must be a mapping"
    for k, v in thresholds.items():
        if not isinstance(k, str) or not _numeric(v) or v < 0:
            return f"threshold {k!r} must be a non-negative number"
    return None


def _check_bandit(params: Mapping[str, Any]) -> str | None:
    c = params.get("exploration", math.sqrt(2))
    if not _numeric(c) or not math.isfinite(c) or c <= 0:
        return "exploration must be a positive number"
    return None


def _check_orthogonal(params: Mapping[str, Any]) -> str | None:
    if params.get("scale", "small") not in ("small", "large"):
        return "scale must be 'small' or 'large'"
    return None


@dataclass(frozen=True)
class CatalogEntry:
    identity: str
    display_name: str
    domain: str
    factory: Callable[..., Mechanism]
    defaults: Mapping[str, Any]
    check: Callable[[Mapping[str, Any]], str | None]

    def schema_error(self, params: Mapping[str, Any]) -> str | None:
        unknown = set(params) - set(self.defaults)
        if unknown:
            return f"unknown parameters {sorted(unknown)}"
        return self.check(params)

    def build(self, params: Mapping[str, Any]) -> Mechanism:
        merged = {**self.defaults, **params}
        return self.factory(**merged)


CATALOG: dict[str, CatalogEntry] = {
    e.identity: e
    for e in (
        CatalogEntry("tabu", "Tabu Search Manager", "combinatorial optimization", TabuSearch,
                     {"tenure": 5, "thresholds": {}}, _check_tabu),
        CatalogEntry("bandit", "Multi-Scale Bandit Proposer", "online learning", MultiScaleBandit,
                     {"exploration": math.sqrt(2)}, _check_bandit),
        CatalogEntry("orthogonal", "Systematic Orthogonal Exploration", "design of experiments",
                     OrthogonalExploration, {"scale": "small"}, _check_orthogonal),
    )
}

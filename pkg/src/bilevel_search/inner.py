"""Task level: propose -> apply -> evaluate -> keep/discard hill climbing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import BudgetExhausted, ConfigSpaceError, NoProposalAvailable
from .evaluator import TrialRecord
from .mechanisms import MechanismStack, mediate
from .proposer import ProposerContext
from .space import Configuration, ParameterSpace, Proposal, apply_proposal, default_space
from .strategy import SearchConfig, initial_search_config

Evaluator = Callable[[Configuration, int, "Proposal | None"], TrialRecord]


@dataclass(frozen=True)
class BudgetSpec:
    T: int = 30
    K: int = 5
    M: int = 2

    def __post_init__(self) -> None:
        if self.T < 1 or self.K < 1 or self.M < 1:
            raise ValueError(f"budgets must be >= 1, got T={self.T} K={self.K} M={self.M}")


@dataclass(frozen=True)
class RunState:
    best_config: Configuration
    best_val: float
    trace: tuple[TrialRecord, ...]
    iteration: int = 0
    search_config: SearchConfig = field(default_factory=SearchConfig)
    mechanism_stack: MechanismStack = field(default_factory=MechanismStack)
    budget: BudgetSpec = field(default_factory=BudgetSpec)
    space: ParameterSpace = field(default_factory=default_space)

    def context(self) -> ProposerContext:
        return ProposerContext(
            best_config=self.best_config,
            trace=self.trace,
            search_config=self.search_config,
            iteration=self.iteration + 1,
            space=self.space,
        )


def start_run(
    evaluator: Evaluator,
    budget: BudgetSpec | None = None,
    space: ParameterSpace | None = None,
    search_config: SearchConfig | None = None,
    stack: MechanismStack | None = None,
) -> RunState:
    """Evaluate the baseline (iteration 0, outside the T budget) and return the initial state."""
    space = space if space is not None else default_space()
    config = space.baseline()
    record = evaluator(config, 0, None)
    record = replace(record, kept=False)
    return RunState(
        best_config=config,
        best_val=record.val_bpb,
        trace=(record,),
        iteration=0,
        search_config=search_config if search_config is not None else initial_search_config(space),
        mechanism_stack=stack if stack is not None else MechanismStack(),
        budget=budget if budget is not None else BudgetSpec(),
        space=space,
    )


def step(state: RunState, proposer, evaluator: Evaluator) -> RunState:
    if state.iteration >= state.budget.T:
        raise BudgetExhausted(f"iteration budget T={state.budget.T} used up")
    it = state.iteration + 1
    stack = state.mechanism_stack
    snapshot = {"mechanisms": stack.identities(), "frozen": tuple(sorted(state.search_config.frozen))}

    proposal: Proposal | None = None
    try:
        proposal = mediate(proposer, state.context(), stack)
        candidate = apply_proposal(state.best_config, proposal, state.search_config, state.space)
    except (ConfigSpaceError, NoProposalAvailable) as exc:
        record = TrialRecord(iteration=it, proposal=proposal, config=state.best_config, val_bpb=None,
                             kept=False, wall_cost=0.0, rejected_reason=f"{type(exc).__name__}: {exc}",
                             forced=bool(proposal and proposal.forced), **snapshot)
    else:
        record = evaluator(candidate, it, proposal)
        record = replace(record, kept=record.val_bpb < state.best_val, forced=proposal.forced, **snapshot)

    best_config, best_val = state.best_config, state.best_val
    if record.kept:
        best_config, best_val = record.config, record.val_bpb
    stack.observe(record, state.best_val - best_val)
    return replace(state, best_config=best_config, best_val=best_val, trace=state.trace + (record,), iteration=it)


def run_inner_block(state: RunState, proposer, evaluator: Evaluator, count: int | None = None) -> RunState:
    count = state.budget.K if count is None else count
    for _ in range(count):
        state = step(state, proposer, evaluator)
    return state

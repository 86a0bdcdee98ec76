import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_search.errors import BudgetExhausted
from bilevel_search.evaluator import LandscapeSpec, RepeatContext, SurrogateEvaluator, TrialRecord
from bilevel_search.inner import BudgetSpec, run_inner_block, start_run, step
from bilevel_search.proposer import ScriptedProposer
from bilevel_search.space import Proposal, default_space
from bilevel_search.strategy import SearchConfig


class FixedProposer:
    def __init__(self, *proposals):
        self.proposals = list(proposals)

    def candidates(self, ctx):
        yield self.proposals[(ctx.iteration - 1) % len(self.proposals)]


def table_evaluator(values):
    """Evaluator returning ``values[iteration]``."""
    def ev(config, iteration, proposal=None):
        return TrialRecord(iteration, proposal, config, values[iteration])
    return ev


def test_strict_improvement_kept(space):
    ev = table_evaluator({0: 1.100, 1: 1.092})
    state = start_run(ev, space=space)
    state = step(state, FixedProposer(Proposal({"LR": 0.004})), ev)
    assert state.trace[-1].kept and state.best_val == 1.092
    assert state.best_config["LR"] == 0.004


def test_tie_discarded(space):
    ev = table_evaluator({0: 1.100, 1: 1.100})
    state = step(start_run(ev, space=space), FixedProposer(Proposal({"LR": 0.004})), ev)
    assert not state.trace[-1].kept and state.best_val == 1.100
    assert state.best_config == space.baseline()


def test_first_scripted_step_is_discarded(space, quiet):
    ev = SurrogateEvaluator(quiet, RepeatContext(0, 1.100), space)
    state = step(start_run(ev, space=space), ScriptedProposer(space=space), ev)
    rec = state.trace[-1]
    assert rec.proposal.changes == {"TOTAL_BATCH_SIZE": 20}
    assert not rec.kept and rec.val_bpb == pytest.approx(1.120, abs=1e-12)


def test_block_counts(space, quiet):
    ev = SurrogateEvaluator(quiet, RepeatContext(0, 1.100), space)
    state = start_run(ev, BudgetSpec(T=30, K=5), space)
    out = run_inner_block(state, ScriptedProposer(space=space), ev)
    assert out.iteration == 5 and len(out.trace) == len(state.trace) + 5


def test_group_a_thirty_steps(space, quiet):
    ev = SurrogateEvaluator(quiet, RepeatContext(0, 1.100), space)
    state = run_inner_block(start_run(ev, space=space), ScriptedProposer(space=space), ev, 30)
    assert state.best_val - 1.100 == pytest.approx(-0.010, abs=1e-12)


def test_budget_exhausted(space):
    ev = table_evaluator({0: 1.1, 1: 1.2})
    state = step(start_run(ev, BudgetSpec(T=1), space), FixedProposer(Proposal({"LR": 0.004})), ev)
    with pytest.raises(BudgetExhausted):
        step(state, FixedProposer(Proposal({"LR": 0.004})), ev)


def test_invalid_proposal_recorded_as_rejected(space):
    ev = table_evaluator({0: 1.1})
    state = step(start_run(ev, space=space), FixedProposer(Proposal({"DEPTH": 8})), ev)
    rec = state.trace[-1]
    assert rec.val_bpb is None and not rec.kept and "LockedParameter" in rec.rejected_reason
    assert state.iteration == 1 and state.best_val == 1.1


def test_frozen_proposal_rejected(space):
    ev = table_evaluator({0: 1.1})
    state = start_run(ev, space=space, search_config=SearchConfig(frozenset({"LR"}), ()))
    state = step(state, FixedProposer(Proposal({"LR": 0.004})), ev)
    assert "FrozenParameter" in state.trace[-1].rejected_reason


def test_budget_validation():
    with pytest.raises(ValueError):
        BudgetSpec(T=0)


# -- running-minimum and strict-keep invariants on generated traces -----------

SPACE = default_space()


def check_trace_invariants(trace):
    best = trace[0].val_bpb
    best_cfg = trace[0].config
    for prev, rec in zip(trace, trace[1:]):
        assert rec.iteration == prev.iteration + 1
        if rec.val_bpb is None:
            assert not rec.kept
            continue
        assert rec.kept == (rec.val_bpb < best)
        if rec.kept:
            best, best_cfg = rec.val_bpb, rec.config
        else:
            # discarded trials start from the incumbent
            assert rec.config == best_cfg.with_changes(rec.proposal.changes) or rec.config == best_cfg
    evaluated = [r.val_bpb for r in trace if r.val_bpb is not None]
    assert best == min(evaluated)
    return best


@st.composite
def proposal_lists(draw):
    out = []
    for _ in range(draw(st.integers(1, 25))):
        name = draw(st.sampled_from(SPACE.editable() + ["DEPTH"]))
        spec = SPACE.get(name)
        if spec.kind == "log2":
            value = draw(st.integers(15, 21))
        elif spec.kind == "real":
            value = draw(st.floats(spec.low, spec.high))
        else:
            value = draw(st.sampled_from(spec.choices))
        out.append(Proposal({name: value}))
    return out


@settings(max_examples=200, deadline=None)
@given(proposal_lists(), st.integers(0, 2**16), st.sampled_from([0.0, 0.002, 0.02]))
def test_running_min_and_strict_keep(proposals, seed, sigma):
    spec = LandscapeSpec(noise_sigma=sigma)
    ev = SurrogateEvaluator(spec, RepeatContext.draw(spec, seed), SPACE)
    state = start_run(ev, BudgetSpec(T=len(proposals)), SPACE)
    state = run_inner_block(state, FixedProposer(*proposals), ev, len(proposals))
    best = check_trace_invariants(state.trace)
    assert state.best_val == best
    mins = [r for r in state.trace]
    running = []
    cur = float("inf")
    for r in mins:
        if r.val_bpb is not None:
            cur = min(cur, r.val_bpb)
        running.append(cur)
    assert all(a >= b for a, b in zip(running, running[1:]))

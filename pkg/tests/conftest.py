from __future__ import annotations

import pytest

from bilevel_search.evaluator import LandscapeSpec, TrialRecord
from bilevel_search.space import Proposal, default_space


def make_trace(steps, baseline=1.100, space=None, mechanisms_at=None):
    """Build a trace from ``(changes, val_bpb)`` pairs; ``val_bpb=None`` marks a rejected trial.

    Kept flags follow the strict-improvement rule; configs track the best.
    ``mechanisms_at`` maps iteration -> tuple of active mechanism ids from that
    iteration on.
    """
    space = space or default_space()
    best_cfg = space.baseline()
    trace = [TrialRecord(0, None, best_cfg, baseline)]
    best = baseline
    mechs: tuple[str, ...] = ()
    for i, (changes, val) in enumerate(steps, 1):
        if mechanisms_at and i in mechanisms_at:
            mechs = tuple(mechanisms_at[i])
        prop = Proposal(changes, "h")
        cfg = best_cfg.with_changes(changes)
        if val is None:
            trace.append(TrialRecord(i, prop, best_cfg, None, False, 0.0, "rejected", mechanisms=mechs))
            continue
        kept = val < best
        trace.append(TrialRecord(i, prop, cfg, val, kept, mechanisms=mechs))
        if kept:
            best, best_cfg = val, cfg
    return tuple(trace)


@pytest.fixture
def space():
    return default_space()


@pytest.fixture
def quiet():
    return LandscapeSpec(noise_sigma=0.0)


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

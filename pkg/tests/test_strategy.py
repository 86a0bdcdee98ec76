import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_search.space import default_space
from bilevel_search.strategy import (
    SearchConfig,
    StrategyPolicy,
    attribution,
    initial_search_config,
    region_start,
    update_search_config,
)

from conftest import make_trace

SPACE = default_space()
EDITABLE = SPACE.editable()


def test_three_discards_freeze(space):
    trace = make_trace([({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13)])
    out = update_search_config(trace, initial_search_config(space), StrategyPolicy(k=3), space)
    assert out.frozen == {"LR"}
    assert "LR" not in out.guidance


def test_two_discards_do_not_freeze(space):
    trace = make_trace([({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12)])
    out = update_search_config(trace, initial_search_config(space), StrategyPolicy(k=3), space)
    assert out.frozen == frozenset()


def test_unfreeze_after_keep_elsewhere(space):
    trace = make_trace([({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13)])
    policy = StrategyPolicy(k=3)
    frozen = update_search_config(trace, initial_search_config(space), policy, space)
    assert frozen.frozen == {"LR"}
    trace = make_trace([({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13),
                        ({"WEIGHT_DECAY": 0.05}, 1.092)])
    out = update_search_config(trace, frozen, policy, space)
    assert out.frozen == frozenset()


def test_frozen_stays_while_still_futile_in_region(space):
    steps = [({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13)]
    trace = make_trace(steps)
    policy = StrategyPolicy(k=3)
    first = update_search_config(trace, initial_search_config(space), policy, space)
    assert update_search_config(trace, first, policy, space) == first


def test_mechanism_change_opens_new_region(space):
    steps = [({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13), ({"HEAD_DIM": 64}, 1.14)]
    trace = make_trace(steps, mechanisms_at={4: ("tabu",)})
    assert region_start(trace) == 4
    cfg = SearchConfig(frozenset({"LR"}), ())
    assert update_search_config(trace, cfg, StrategyPolicy(k=3), space).frozen == frozenset()


def test_disabled_policy_is_identity(space):
    trace = make_trace([({"LR": 0.004}, 1.11)] * 4)
    cfg = initial_search_config(space)
    assert update_search_config(trace, cfg, StrategyPolicy(enabled=False), space) is cfg


def test_attribution_examples():
    assert attribution((), "LR") == (0, 0.0)
    trace = make_trace([({"WEIGHT_DECAY": 0.05}, 1.092)])
    count, net = attribution(trace, "WEIGHT_DECAY")
    assert count == 1 and net == pytest.approx(0.008, abs=1e-12)
    trace = make_trace([({"LR": 0.004}, 1.11), ({"LR": 0.001}, 1.12), ({"LR": 0.008}, 1.13)])
    assert attribution(trace, "LR") == (3, 0.0)


def test_guidance_orders_least_proposed_first(space):
    trace = make_trace([({"LR": 0.004}, 1.11), ({"WEIGHT_DECAY": 0.05}, 1.09)])
    out = update_search_config(trace, initial_search_config(space), StrategyPolicy(k=3), space)
    assert out.guidance[-2:] == ("WEIGHT_DECAY", "LR")
    assert set(out.guidance) == set(EDITABLE)


def test_search_config_rejects_overlap():
    with pytest.raises(ValueError):
        SearchConfig(frozenset({"LR"}), ("LR",))


# -- oracle re-derivation -----------------------------------------------------


def oracle_update(steps, mech_changes, current, k):
    """Scan the step list directly: per-parameter counts and gains, then apply the freeze rules."""
    best = 1.100
    counts = {n: 0 for n in EDITABLE}
    gains = {n: 0.0 for n in EDITABLE}
    last_keep = 0
    last_stack_change = 0
    for i, (changes, val) in enumerate(steps, 1):
        if i in mech_changes:
            last_stack_change = i
        for n in changes:
            counts[n] += 1
        if val is not None and val < best:
            for n in changes:
                gains[n] += best - val
            best = val
            last_keep = i
    start = max(1, last_keep + 1, last_stack_change)
    recent = {n for i, (changes, _) in enumerate(steps, 1) if i >= start for n in changes}
    frozen = set(current)
    for n in EDITABLE:
        if counts[n] >= k and gains[n] == 0.0:
            frozen.add(n)
    frozen = {n for n in frozen if n in recent}
    return frozen


@st.composite
def traces(draw):
    n = draw(st.integers(0, 30))
    steps = []
    for _ in range(n):
        names = draw(st.lists(st.sampled_from(EDITABLE), min_size=1, max_size=2, unique=True))
        val = draw(st.one_of(st.none(), st.floats(1.0, 1.2)))
        steps.append(({name: 1 for name in names}, val))
    mech = draw(st.sets(st.integers(1, max(n, 1)), max_size=3))
    current = draw(st.sets(st.sampled_from(EDITABLE), max_size=4))
    k = draw(st.integers(1, 5))
    return steps, mech, current, k


def _mech_map(mech):
    return {i: ("m",) * (j + 1) for j, i in enumerate(sorted(mech))}


@settings(max_examples=400, deadline=None)
@given(traces())
def test_freeze_rule_matches_oracle(case):
    steps, mech, current, k = case
    trace = make_trace(steps, mechanisms_at=_mech_map(mech))
    cfg = SearchConfig(frozenset(current), ())
    out = update_search_config(trace, cfg, StrategyPolicy(k=k), SPACE)
    assert out.frozen == oracle_update(steps, mech, current, k)
    assert set(out.guidance) | out.frozen == set(EDITABLE)
    assert not set(out.guidance) & out.frozen
    # idempotent on an unchanged trace
    assert update_search_config(trace, out, StrategyPolicy(k=k), SPACE).frozen == out.frozen

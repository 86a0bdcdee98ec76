"""Proposal backends: a deterministic biased script and an external LLM client.

The scripted proposer reproduces the default path an LLM takes from the same
baseline: try a larger batch first, then weight decay and window pattern, then
the LR family, and only at the very end a smaller batch. Its repeatable prefix
means that, left alone, it keeps re-trying the batch increase forever.

Both backends expose ``candidates(ctx)``, a lazy stream in priority order; a
vetoing mechanism pulls the next candidate instead of the first.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Any, Iterator, Sequence

from .errors import EndpointUnavailable, FrozenParameter, LockedParameter, NoProposalAvailable
from .evaluator import DECREASE, INCREASE, TrialRecord
from .space import (
    CATEGORICAL,
    LOG2,
    Configuration,
    ParameterSpace,
    Proposal,
    Value,
    default_space,
)
from .strategy import SearchConfig, initial_search_config
from .wire import WireClient

log = logging.getLogger(__name__)

SMALL = "small"
LARGE = "large"
SCALES = (SMALL, LARGE)
DIRECTIONS = (DECREASE, INCREASE)


@dataclass(frozen=True)
class ProposerContext:
    best_config: Configuration
    trace: tuple[TrialRecord, ...] = ()
    search_config: SearchConfig = field(default_factory=SearchConfig)
    iteration: int = 1
    space: ParameterSpace = field(default_factory=default_space)

    def attempted(self) -> set[tuple]:
        return {rec.proposal.key() for rec in self.trace if rec.proposal is not None}

    def summary(self) -> dict[str, dict[str, int]]:
        """Per-parameter proposal, keep and discard counts."""
        out = {name: {"proposed": 0, "kept": 0, "discarded": 0} for name in self.space.names()}
        for rec in self.trace:
            if rec.proposal is None:
                continue
            for name in rec.proposal.changes:
                if name in out:
                    out[name]["proposed"] += 1
                    out[name]["kept" if rec.kept else "discarded"] += 1
        return out


@dataclass(frozen=True)
class RuleEntry:
    parameter: str
    value: Value
    repeatable: bool = False
    hypothesis: str = ""

    def proposal(self) -> Proposal:
        return Proposal({self.parameter: self.value}, self.hypothesis, origin="scripted")


@dataclass(frozen=True)
class PriorityRule:
    entries: tuple[RuleEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("priority rule must not be empty")
        object.__setattr__(self, "entries", tuple(self.entries))

    def validate(self, space: ParameterSpace) -> None:
        for e in self.entries:
            spec = space.get(e.parameter)
            if not spec.contains(e.value):
                raise ValueError(f"rule entry {e.parameter}={e.value!r} outside its domain")


def instantiate_direction(ctx: ProposerContext, parameter: str, direction: str, scale: str = SMALL) -> Proposal:
    """Concrete move of one parameter from the current best configuration.

    log2 parameters step the exponent by 1 (small) or 2 (large); reals are
    multiplied or divided by 2 or 4; categoricals move to the neighbouring value
    in declaration order. Results are clamped to the domain.
    """
    if direction not in DIRECTIONS or scale not in SCALES:
        raise ValueError(f"bad direction/scale {direction!r}/{scale!r}")
    spec = ctx.space.get(parameter)
    if spec.locked:
        raise LockedParameter(f"{parameter} is locked")
    if parameter in ctx.search_config.frozen:
        raise FrozenParameter(f"{parameter} is frozen")
    current = ctx.best_config[parameter]
    sign = -1 if direction == DECREASE else 1
    clamped = False
    if spec.kind == LOG2:
        target = current + sign * (1 if scale == SMALL else 2)
        new = min(max(target, spec.low), spec.high)
        clamped = new != target
    elif spec.kind == CATEGORICAL:
        idx = int(spec.position(current)) + sign
        clamped = not 0 <= idx < len(spec.choices)
        new = spec.choices[min(max(idx, 0), len(spec.choices) - 1)]
    else:
        factor = 2.0 if scale == SMALL else 4.0
        target = current * factor if sign > 0 else current / factor
        new = min(max(target, spec.low), spec.high)
        clamped = new != target
    verb = "lower" if sign < 0 else "raise"
    return Proposal({parameter: new}, f"{verb} {parameter} ({scale} step) to probe that direction",
                    clamped=clamped)


def default_rule(space: ParameterSpace | None = None) -> PriorityRule:
    """The scripted default path, with targets computed from the baseline."""
    space = space if space is not None else default_space()
    base = ProposerContext(space.baseline(), space=space, search_config=initial_search_config(space))

    def move(param: str, direction: str, scale: str = SMALL) -> Value:
        return instantiate_direction(base, param, direction, scale).changes[param]

    batch = "TOTAL_BATCH_SIZE" in space
    entries = []
    if batch:
        entries.append(RuleEntry("TOTAL_BATCH_SIZE", move("TOTAL_BATCH_SIZE", INCREASE), True,
                                 "A larger batch gives smoother gradients and a lower loss."))
    if "WEIGHT_DECAY" in space:
        entries.append(RuleEntry("WEIGHT_DECAY", move("WEIGHT_DECAY", DECREASE), True,
                                 "Less weight decay lets a short run fit faster."))
    if "WINDOW_PATTERN" in space and space.get("WINDOW_PATTERN").contains("SSSS"):
        entries.append(RuleEntry("WINDOW_PATTERN", "SSSS", True,
                                 "Short attention windows everywhere are cheaper per step."))
    for param in ("LR", "UNEMBEDDING_LR", "MATRIX_LR", "FINAL_LR_FRAC"):
        if param not in space:
            continue
        entries.append(RuleEntry(param, move(param, INCREASE), False, f"A higher {param} may converge faster."))
        entries.append(RuleEntry(param, move(param, DECREASE), False, f"A lower {param} may be more stable."))
    if batch:
        entries.append(RuleEntry("TOTAL_BATCH_SIZE", move("TOTAL_BATCH_SIZE", DECREASE), False,
                                 "A smaller batch buys more optimizer steps in the time budget."))
        entries.append(RuleEntry("TOTAL_BATCH_SIZE", move("TOTAL_BATCH_SIZE", DECREASE, LARGE), False,
                                 "A much smaller batch buys even more optimizer steps."))
    return PriorityRule(tuple(entries))


def _rotate(items: list, offset: int) -> list:
    if not items:
        return items
    k = offset % len(items)
    return items[k:] + items[:k]


def scripted_candidates(ctx: ProposerContext, rule: PriorityRule) -> Iterator[Proposal]:
    """Candidates in the scripted proposer's priority order.

    1. untried repeatable entries, in rule order;
    2. tried repeatable entries, rotated by iteration (the repetition habit);
    3. untried non-repeatable entries, in rule order;
    4. tried repeatable entries whose value is already in the best config.

    Frozen and locked parameters are skipped throughout. Entries that would not
    change the best config are held back to step 4.
    """
    locked = {s.name for s in ctx.space if s.locked}
    blocked = ctx.search_config.frozen | locked
    attempted = ctx.attempted()
    live = [e for e in rule.entries if e.parameter not in blocked]

    def no_op(e: RuleEntry) -> bool:
        return ctx.space.get(e.parameter).equal(ctx.best_config[e.parameter], e.value)

    def tried(e: RuleEntry) -> bool:
        return e.proposal().key() in attempted

    stages = [
        [e for e in live if e.repeatable and not tried(e) and not no_op(e)],
        _rotate([e for e in live if e.repeatable and tried(e) and not no_op(e)], ctx.iteration),
        [e for e in live if not e.repeatable and not tried(e) and not no_op(e)],
        _rotate([e for e in live if e.repeatable and tried(e) and no_op(e)], ctx.iteration),
    ]
    for stage in stages:
        for e in stage:
            yield e.proposal()


def scripted_propose(ctx: ProposerContext, rule: PriorityRule | None = None) -> Proposal:
    rule = rule if rule is not None else default_rule(ctx.space)
    for p in scripted_candidates(ctx, rule):
        return p
    raise NoProposalAvailable("every rule entry is frozen, locked or exhausted")


class ScriptedProposer:
    """Deterministic proposer; ignores guidance ordering and follows its rule."""

    def __init__(self, rule: PriorityRule | None = None, space: ParameterSpace | None = None):
        self.space = space if space is not None else default_space()
        self.rule = rule if rule is not None else default_rule(self.space)
        self.rule.validate(self.space)

    def candidates(self, ctx: ProposerContext) -> Iterator[Proposal]:
        return scripted_candidates(ctx, self.rule)

    def propose(self, ctx: ProposerContext) -> Proposal:
        return scripted_propose(ctx, self.rule)

    def instantiate(self, ctx: ProposerContext, parameter: str, direction: str, scale: str = SMALL) -> Proposal:
        return instantiate_direction(ctx, parameter, direction, scale)


def load_prompt(name: str) -> Template:
    text = resources.files("bilevel_search").joinpath("prompts", f"{name}.txt").read_text()
    return Template(text)


def render_propose_prompt(ctx: ProposerContext, vetoed: Sequence[Proposal] = ()) -> str:
    locked = [s.name for s in ctx.space if s.locked]
    history = "\n".join(
        f"  {name}: {c['proposed']} proposed, {c['kept']} kept"
        for name, c in ctx.summary().items() if c["proposed"]
    ) or "  (none)"
    veto_text = ""
    if vetoed:
        veto_text = "\nRejected by the search mechanism, propose something else:\n" + "\n".join(
            f"  {json.dumps(dict(p.changes), sort_keys=True)}" for p in vetoed) + "\n"
    return load_prompt("propose").substitute(
        iteration=ctx.iteration,
        best_config=json.dumps(ctx.best_config.to_dict(), sort_keys=True, indent=2),
        guidance=", ".join(ctx.search_config.guidance) or "(any)",
        frozen=", ".join(sorted(ctx.search_config.frozen)) or "(none)",
        locked=", ".join(locked) or "(none)",
        history=history,
        vetoed=veto_text,
    )


def parse_proposal_reply(reply: dict[str, Any], space: ParameterSpace) -> Proposal:
    """Accept ``{"changes", "hypothesis"}`` at top level, under ``proposal``, or as JSON in ``text``."""
    body: Any = reply.get("proposal", reply)
    if "changes" not in body and isinstance(reply.get("text"), str):
        body = json.loads(_json_block(reply["text"]))
    if not isinstance(body, dict) or not isinstance(body.get("changes"), dict) or not body["changes"]:
        raise ValueError("reply has no non-empty 'changes' object")
    changes = {}
    for name, value in body["changes"].items():
        if name in space and space.get(name).kind == LOG2 and isinstance(value, float) and value.is_integer():
            value = int(value)
        changes[name] = value
    return Proposal(changes, str(body.get("hypothesis", "")), origin="external")


def _json_block(text: str) -> str:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ValueError("no JSON object in reply text")
    return text[start:end + 1]


class ExternalProposer:
    """LLM proposer behind the wire contract.

    Malformed replies are retried up to ``max_malformed`` times; an unreachable
    endpoint or too many malformed replies raises ``NoProposalAvailable``.
    Directional requests from mechanisms are instantiated locally with the same
    deterministic rule as the scripted proposer.
    """

    def __init__(self, client: WireClient, space: ParameterSpace | None = None, max_malformed: int = 3):
        self.client = client
        self.space = space if space is not None else default_space()
        self.max_malformed = max_malformed
        self.last_retries = 0

    def _request(self, ctx: ProposerContext, vetoed: Sequence[Proposal]) -> Proposal:
        prompt = render_propose_prompt(ctx, vetoed)
        payload = {
            "messages": [
                {"role": "system", "content": "You propose hyperparameter changes as JSON."},
                {"role": "user", "content": prompt},
            ],
            "round": "propose",
            "trace_summary": ctx.summary(),
            "runner_description": "single-track keep/discard hill climbing",
        }
        self.last_retries = 0
        for attempt in range(self.max_malformed + 1):
            try:
                reply = self.client.post(payload)
            except EndpointUnavailable as exc:
                raise NoProposalAvailable(str(exc)) from exc
            try:
                return parse_proposal_reply(reply, self.space)
            except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
                log.warning("malformed proposal reply (%s); retrying", exc)
                self.last_retries = attempt + 1
        raise NoProposalAvailable(f"{self.max_malformed + 1} malformed replies in a row")

    def candidates(self, ctx: ProposerContext) -> Iterator[Proposal]:
        vetoed: list[Proposal] = []
        while True:
            p = self._request(ctx, vetoed)
            yield p
            vetoed.append(p)

    def propose(self, ctx: ProposerContext) -> Proposal:
        return self._request(ctx, ())

    def instantiate(self, ctx: ProposerContext, parameter: str, direction: str, scale: str = SMALL) -> Proposal:
        return instantiate_direction(ctx, parameter, direction, scale)


def external_propose(ctx: ProposerContext, client: WireClient) -> Proposal:
    return ExternalProposer(client, ctx.space).propose(ctx)

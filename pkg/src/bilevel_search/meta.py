"""Mechanism research: diagnose the trace, run a four-round session, validate, activate.

Generation is narrowed to instantiating a catalog mechanism with parameters, so
validation is decidable. A failed artifact never touches the active stack.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .errors import EndpointUnavailable, SessionAborted
from .evaluator import INCREASE, TrialRecord
from .mechanisms import CATALOG, MechanismStack, mediate
from .proposer import ProposerContext, instantiate_direction, load_prompt
from .space import ParameterSpace, Proposal, default_space
from .strategy import initial_search_config
from .wire import WireClient

log = logging.getLogger(__name__)

SESSION_SECONDS = 180.0
ROUND_NAMES = ("explore", "critique", "specify", "generate")

REPETITION = "Repetition"
FIXATION = "Fixation"
STALL = "Stall"
NO_DIAGNOSIS = "NoDiagnosis"

PENDING = "pending"
PASSED = "passed"
FAILED = "failed"

MISSING_DEPENDENCY = "missing-dependency"

# first inactive entry wins; when all are active the head is re-specified
PREFERENCES = {
    REPETITION: ("tabu", "orthogonal", "bandit"),
    FIXATION: ("orthogonal", "tabu", "bandit"),
    STALL: ("bandit", "orthogonal", "tabu"),
    NO_DIAGNOSIS: tuple(CATALOG),
}


@dataclass(frozen=True)
class FailureMode:
    kind: str
    evidence: tuple[int, ...] = ()


@dataclass(frozen=True)
class DiagnosisThresholds:
    repeats: int = 3
    fixation_share: float = 0.7
    stall_window: int = 5


def diagnose_trace(trace: Sequence[TrialRecord], thresholds: DiagnosisThresholds = DiagnosisThresholds()) -> FailureMode:
    proposed = [(i, rec) for i, rec in enumerate(trace) if rec.proposal is not None]
    if not proposed:
        return FailureMode(NO_DIAGNOSIS)

    by_key: dict[tuple, list[int]] = {}
    for i, rec in proposed:
        by_key.setdefault(rec.proposal.key(), []).append(i)
    repeated = [idx for idx in by_key.values() if len(idx) >= thresholds.repeats]
    if repeated:
        return FailureMode(REPETITION, tuple(max(repeated, key=len)))

    touches = Counter(name for _, rec in proposed for name in rec.proposal.changes)
    name, hits = max(touches.items(), key=lambda kv: kv[1])
    if hits >= thresholds.fixation_share * len(proposed):
        return FailureMode(FIXATION, tuple(i for i, rec in proposed if rec.proposal.touches(name)))

    tail = proposed[-thresholds.stall_window:]
    if len(tail) == thresholds.stall_window and not any(rec.kept for _, rec in tail):
        return FailureMode(STALL, tuple(i for i, _ in tail))
    return FailureMode(NO_DIAGNOSIS)


@dataclass(frozen=True)
class SessionRound:
    name: str
    input: Any
    output: Any


@dataclass(frozen=True)
class SessionTranscript:
    rounds: tuple[SessionRound, ...] = ()
    retries: int = 0
    session_id: str = ""

    @property
    def complete(self) -> bool:
        return tuple(r.name for r in self.rounds) == ROUND_NAMES

    def to_json(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "retries": self.retries,
            "rounds": [{"name": r.name, "input": r.input, "output": r.output} for r in self.rounds],
        }


@dataclass(frozen=True)
class MechanismArtifact:
    identity: str
    parameters: Mapping[str, Any] = field(default_factory=dict)
    provenance: str = ""
    validation: str = PENDING
    reason: str | None = None
    flags: frozenset[str] = frozenset()

    def failed(self, reason: str) -> MechanismArtifact:
        return replace(self, validation=FAILED, reason=reason)

    def to_json(self) -> dict[str, Any]:
        return {
            "identity": self.identity,
            "parameters": json.loads(json.dumps(dict(self.parameters), sort_keys=True, default=str)),
            "provenance": self.provenance,
            "validation": self.validation,
            "reason": self.reason,
            "flags": sorted(self.flags),
        }


def _trace_summary(trace: Sequence[TrialRecord]) -> dict[str, Any]:
    proposed = [r for r in trace if r.proposal is not None]
    return {
        "trials": len(proposed),
        "kept": sum(r.kept for r in proposed),
        "recent": [
            {"iteration": r.iteration, "changes": dict(sorted(r.proposal.changes.items())), "kept": r.kept}
            for r in proposed[-10:]
        ],
    }


class CatalogResearcher:
    """Deterministic researcher: picks the catalog mechanism that answers the diagnosis."""

    def __init__(self, thresholds: DiagnosisThresholds = DiagnosisThresholds()):
        self.thresholds = thresholds

    def run(self, trace: Sequence[TrialRecord], stack: MechanismStack, session_id: str = ""):
        active = set(stack.identities())
        candidates = [name for name in CATALOG if name not in active]
        explore = SessionRound("explore", {"active": sorted(active)}, {"candidates": candidates})

        diagnosis = diagnose_trace(trace, self.thresholds)
        prefs = PREFERENCES[diagnosis.kind]
        if diagnosis.kind == NO_DIAGNOSIS:
            choice = candidates[0] if candidates else prefs[0]
        else:
            choice = next((name for name in prefs if name not in active), prefs[0])
        critique = SessionRound("critique", {"diagnosis": diagnosis.kind, "evidence": list(diagnosis.evidence)},
                                {"selected": choice})

        params = dict(CATALOG[choice].defaults)
        specify = SessionRound("specify", {"selected": choice}, {"identity": choice, "parameters": params})
        artifact = MechanismArtifact(choice, params, provenance=session_id)
        generate = SessionRound("generate", {"identity": choice}, artifact.to_json())
        return artifact, SessionTranscript((explore, critique, specify, generate), 0, session_id)


FAILING_FIXTURES = (
    MechanismArtifact("gp_regressor", {"kernel": "matern"}, flags=frozenset({MISSING_DEPENDENCY})),
    MechanismArtifact("diversity_enforcer", {}),
    MechanismArtifact("fixation_detector", {}),
)


class FailAllResearcher:
    """Emits artifacts that never validate; models sessions whose code fails to import."""

    def __init__(self, fixtures: Sequence[MechanismArtifact] = FAILING_FIXTURES):
        self.fixtures = tuple(fixtures)
        self._calls = 0

    def run(self, trace: Sequence[TrialRecord], stack: MechanismStack, session_id: str = ""):
        fixture = self.fixtures[self._calls % len(self.fixtures)]
        self._calls += 1
        artifact = replace(fixture, provenance=session_id)
        rounds = (
            SessionRound("explore", {"active": list(stack.identities())}, {"candidates": [fixture.identity]}),
            SessionRound("critique", {"diagnosis": diagnose_trace(trace).kind}, {"selected": fixture.identity}),
            SessionRound("specify", {"selected": fixture.identity},
                         {"identity": fixture.identity, "parameters": dict(fixture.parameters)}),
            SessionRound("generate", {"identity": fixture.identity}, artifact.to_json()),
        )
        return artifact, SessionTranscript(rounds, 0, session_id)


def _catalog_description() -> str:
    return "; ".join(f"{e.identity} ({e.display_name}) params={dict(e.defaults)}" for e in CATALOG.values())


class ExternalResearcher:
    """Four rounds, one POST each; the generate reply must name a catalog mechanism."""

    def __init__(self, client: WireClient):
        self.client = client

    def run(self, trace: Sequence[TrialRecord], stack: MechanismStack, session_id: str = ""):
        summary = _trace_summary(trace)
        runner = (f"keep/discard hill climbing; active mechanisms: {list(stack.identities()) or 'none'}")
        diagnosis = diagnose_trace(trace)
        messages = [{"role": "system", "content": "You design search mechanisms for an optimization loop."}]
        rounds: list[SessionRound] = []
        previous = ""
        reply: dict[str, Any] = {}
        for name in ROUND_NAMES:
            prompt = load_prompt(f"research_{name}").safe_substitute(
                runner_description=runner,
                trace_summary=json.dumps(summary, sort_keys=True),
                diagnosis=diagnosis.kind,
                previous=previous,
                catalog=_catalog_description(),
            )
            messages.append({"role": "user", "content": prompt})
            payload = {"messages": list(messages), "round": name, "trace_summary": summary,
                       "runner_description": runner}
            try:
                reply = self.client.post(payload)
            except EndpointUnavailable as exc:
                raise SessionAborted(str(exc), SessionTranscript(tuple(rounds), 0, session_id)) from exc
            previous = str(reply.get("text", ""))
            messages.append({"role": "assistant", "content": previous})
            rounds.append(SessionRound(name, {"prompt": prompt}, reply))
        transcript = SessionTranscript(tuple(rounds), 0, session_id)

        spec = reply.get("mechanism")
        if not isinstance(spec, Mapping) or not isinstance(spec.get("identity"), str):
            artifact = MechanismArtifact("<none>", {}, provenance=session_id).failed(
                "unresolved: generate reply names no mechanism")
            return artifact, transcript
        params = spec.get("parameters") or {}
        if not isinstance(params, Mapping):
            return MechanismArtifact(spec["identity"], {}, session_id).failed("schema: parameters not an object"), transcript
        return MechanismArtifact(spec["identity"], dict(params), provenance=session_id), transcript


def run_session(trace: Sequence[TrialRecord], stack: MechanismStack, researcher, session_id: str = ""):
    """Run one research session; an aborted session yields a failed artifact, never an exception."""
    try:
        return researcher.run(trace, stack, session_id)
    except SessionAborted as exc:
        transcript = exc.args[1] if len(exc.args) > 1 else SessionTranscript(session_id=session_id)
        log.warning("research session %s aborted: %s", session_id, exc.args[0])
        artifact = MechanismArtifact("<none>", {}, provenance=session_id).failed(f"aborted: {exc.args[0]}")
        return artifact, transcript


class _SmokeProposer:
    def candidates(self, ctx: ProposerContext):
        yield instantiate_direction(ctx, ctx.space.editable()[0], INCREASE)

    def instantiate(self, ctx, parameter, direction, scale="small"):
        return instantiate_direction(ctx, parameter, direction, scale)


def validate_artifact(artifact: MechanismArtifact, space: ParameterSpace | None = None) -> MechanismArtifact:
    """Resolve the identity, type-check parameters, then smoke-mediate one synthetic proposal."""
    if artifact.validation != PENDING:
        return artifact
    space = space if space is not None else default_space()
    if MISSING_DEPENDENCY in artifact.flags:
        return artifact.failed("unresolved: missing dependency")
    entry = CATALOG.get(artifact.identity)
    if entry is None:
        return artifact.failed(f"unresolved: no mechanism named {artifact.identity!r}")
    problem = entry.schema_error(artifact.parameters)
    if problem:
        return artifact.failed(f"schema: {problem}")
    try:
        mech = entry.build(artifact.parameters)
        mech.attach((), space)
        ctx = ProposerContext(space.baseline(), (), initial_search_config(space), 1, space)
        proposal = mediate(_SmokeProposer(), ctx, MechanismStack((mech,)))
        if not isinstance(proposal, Proposal):
            raise TypeError("mediation returned no proposal")
    except Exception as exc:  # noqa: BLE001 - any smoke failure means revert
        return artifact.failed(f"smoke: {type(exc).__name__}: {exc}")
    return replace(artifact, validation=PASSED, reason=None)


def activate_or_revert(
    stack: MechanismStack,
    artifact: MechanismArtifact,
    trace: Sequence[TrialRecord] = (),
    space: ParameterSpace | None = None,
) -> MechanismStack:
    """Put a passed artifact on the stack (replacing its identity); otherwise keep ``stack`` as is."""
    if artifact.validation != PASSED:
        log.warning("mechanism %r reverted: %s", artifact.identity, artifact.reason or artifact.validation)
        return stack
    space = space if space is not None else default_space()
    mech = CATALOG[artifact.identity].build(artifact.parameters)
    mech.attach(trace, space)
    return stack.with_mechanism(mech)

import json

import httpx
import pytest

from bilevel_search.evaluator import LandscapeSpec, RepeatContext, SurrogateEvaluator
from bilevel_search.inner import run_inner_block, start_run
from bilevel_search.mechanisms import MechanismStack, TabuSearch
from bilevel_search.meta import (
    FAILED,
    FAILING_FIXTURES,
    FIXATION,
    NO_DIAGNOSIS,
    PASSED,
    PENDING,
    REPETITION,
    ROUND_NAMES,
    STALL,
    CatalogResearcher,
    ExternalResearcher,
    FailAllResearcher,
    MechanismArtifact,
    activate_or_revert,
    diagnose_trace,
    run_session,
    validate_artifact,
)
from bilevel_search.proposer import ScriptedProposer
from bilevel_search.space import default_space
from bilevel_search.wire import WireClient, WireConfig

from conftest import make_trace

SPACE = default_space()


def group_a_trace(n=30):
    ev = SurrogateEvaluator(LandscapeSpec(noise_sigma=0.0), RepeatContext(0, 1.100), SPACE)
    return run_inner_block(start_run(ev, space=SPACE), ScriptedProposer(space=SPACE), ev, n).trace


def test_empty_trace_no_diagnosis():
    assert diagnose_trace(()).kind == NO_DIAGNOSIS


def test_group_a_trace_is_repetition():
    assert diagnose_trace(group_a_trace()).kind == REPETITION


def test_fixation_eight_of_ten():
    lr = [({"LR": 0.0001 * (i + 2)}, 1.2 - 0.001 * i) for i in range(8)]
    other = [({"HEAD_DIM": 64}, 1.3), ({"MATRIX_LR": 0.02}, 1.3)]
    assert diagnose_trace(make_trace(lr + other)).kind == FIXATION


def test_stall():
    steps = [({name: v}, 1.2) for name, v in
             [("LR", 0.004), ("HEAD_DIM", 64), ("MATRIX_LR", 0.02), ("WEIGHT_DECAY", 0.05), ("FINAL_LR_FRAC", 0.2)]]
    assert diagnose_trace(make_trace(steps)).kind == STALL


def test_catalog_repetition_gives_tabu():
    artifact, transcript = run_session(group_a_trace(10), MechanismStack(), CatalogResearcher(), "s1")
    assert artifact.identity == "tabu" and artifact.validation == PENDING
    assert artifact.parameters == {"tenure": 5, "thresholds": {}}
    assert transcript.complete and tuple(r.name for r in transcript.rounds) == ROUND_NAMES


def test_catalog_tabu_active_moves_to_next():
    stack = MechanismStack((TabuSearch(),))
    artifact, _ = run_session(group_a_trace(20), stack, CatalogResearcher())
    assert artifact.identity == "orthogonal"


def test_unknown_identity_fails_validation():
    out = validate_artifact(MechanismArtifact("simulated_annealing", {}))
    assert out.validation == FAILED and out.reason.startswith("unresolved")


def test_validate_examples():
    assert validate_artifact(MechanismArtifact("tabu", {"tenure": 5})).validation == PASSED
    bad = validate_artifact(MechanismArtifact("tabu", {"tenure": -1}))
    assert bad.validation == FAILED and bad.reason.startswith("schema")
    gp = validate_artifact(FAILING_FIXTURES[0])
    assert gp.validation == FAILED and gp.reason.startswith("unresolved")
    for fixture in FAILING_FIXTURES:
        assert validate_artifact(fixture).validation == FAILED
    assert validate_artifact(MechanismArtifact("bandit", {"exploration": 0})).validation == FAILED
    assert validate_artifact(MechanismArtifact("orthogonal", {"scale": "huge"})).validation == FAILED
    assert validate_artifact(MechanismArtifact("tabu", {"colour": "red"})).validation == FAILED


def test_activate_or_revert():
    stack = MechanismStack()
    failed = validate_artifact(MechanismArtifact("tabu", {"tenure": -1}))
    assert activate_or_revert(stack, failed) is stack
    passed = validate_artifact(MechanismArtifact("tabu", {"tenure": 5}))
    out = activate_or_revert(stack, passed)
    assert out.identities() == ("tabu",) and stack.identities() == ()


def test_fail_all_cycles_fixtures():
    researcher = FailAllResearcher()
    names = [run_session((), MechanismStack(), researcher)[0].identity for _ in range(4)]
    assert names == ["gp_regressor", "diversity_enforcer", "fixation_detector", "gp_regressor"]


# -- external researcher ------------------------------------------------------


def _client(handler):
    return WireClient(WireConfig("http://stub/research", retries=0), transport=httpx.MockTransport(handler))


def test_external_researcher_four_rounds():
    rounds = []

    def handler(request):
        body = json.loads(request.content)
        rounds.append(body["round"])
        if body["round"] == "generate":
            return httpx.Response(200, json={"text": "done", "mechanism": {"identity": "bandit", "parameters": {}}})
        return httpx.Response(200, json={"text": f"notes for {body['round']}"})

    artifact, transcript = run_session(group_a_trace(10), MechanismStack(), ExternalResearcher(_client(handler)))
    assert rounds == list(ROUND_NAMES) and transcript.complete
    assert validate_artifact(artifact).validation == PASSED


def test_external_researcher_without_mechanism_fails():
    artifact, transcript = run_session((), MechanismStack(),
                                       ExternalResearcher(_client(lambda r: httpx.Response(200, json={"text": "x"}))))
    assert artifact.validation == FAILED and transcript.complete


def test_external_researcher_abort_is_non_destructive():
    def handler(request):
        raise httpx.ConnectError("down", request=request)

    stack = MechanismStack()
    artifact, transcript = run_session((), stack, ExternalResearcher(_client(handler)))
    assert artifact.validation == FAILED and not transcript.complete
    assert activate_or_revert(stack, validate_artifact(artifact)) is stack


@pytest.mark.parametrize("identity", ["tabu", "bandit", "orthogonal"])
def test_catalog_defaults_validate(identity):
    from bilevel_search.mechanisms import CATALOG

    art = MechanismArtifact(identity, dict(CATALOG[identity].defaults))
    assert validate_artifact(art, SPACE).validation == PASSED

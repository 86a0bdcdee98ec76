"""Bilevel configuration search over a calibrated surrogate objective."""

from .evaluator import LandscapeSpec, RepeatContext, TrialRecord, evaluate, landscape_delta
from .harness import GROUPS, GroupResult, RepeatResult, run_ablation, run_repeat
from .inner import BudgetSpec, RunState, run_inner_block, start_run, step
from .mechanisms import MechanismStack, mediate
from .meta import activate_or_revert, diagnose_trace, run_session, validate_artifact
from .proposer import ProposerContext, ScriptedProposer, instantiate_direction, scripted_propose
from .space import Configuration, ParameterSpec, Proposal, apply_proposal, default_space
from .strategy import SearchConfig, StrategyPolicy, attribution, update_search_config

__all__ = [
    "BudgetSpec", "Configuration", "GROUPS", "GroupResult", "LandscapeSpec", "MechanismStack",
    "ParameterSpec", "Proposal", "ProposerContext", "RepeatContext", "RepeatResult", "RunState",
    "ScriptedProposer", "SearchConfig", "StrategyPolicy", "TrialRecord", "activate_or_revert",
    "apply_proposal", "attribution", "default_space", "diagnose_trace", "evaluate",
    "instantiate_direction", "landscape_delta", "mediate", "run_ablation", "run_inner_block",
    "run_repeat", "run_session", "scripted_propose", "start_run", "step", "update_search_config",
    "validate_artifact",
]

"""Budgeted black-box evaluation over a calibrated surrogate landscape.

The surrogate replaces a 300-second training run: a configuration's val_bpb is
the repeat's baseline draw, plus an additive table of per-parameter effects,
plus per-trial Gaussian noise. Every random draw is keyed on
``(landscape seed, run seed, trial index)`` so traces replay exactly.
"""

from __future__ import annotations

import json
import math
import re
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import SpaceFileError
from .space import Configuration, ParameterSpace, Proposal, default_space, iter_key_values, parse_value

TRIAL_SECONDS = 300.0

DECREASE = "decrease"
INCREASE = "increase"

DEFAULT_CONTRIBUTIONS: Mapping[tuple[str, Any], float] = MappingProxyType(
    {
        ("WEIGHT_DECAY", DECREASE): -0.008,
        ("WINDOW_PATTERN", "SSSS"): -0.002,
        ("TOTAL_BATCH_SIZE", 18): -0.039,
        ("TOTAL_BATCH_SIZE", 17): -0.060,
        ("TOTAL_BATCH_SIZE", 16): -0.050,
        ("TOTAL_BATCH_SIZE", 20): 0.020,
    }
)


@dataclass(frozen=True)
class TrialRecord:
    """One propose -> evaluate -> decide event.

    ``val_bpb`` is ``None`` only for a proposal rejected before evaluation
    (``rejected_reason`` set); such trials cost nothing and are never kept.
    """

    iteration: int
    proposal: Proposal | None
    config: Configuration
    val_bpb: float | None
    kept: bool = False
    wall_cost: float = TRIAL_SECONDS
    rejected_reason: str | None = None
    mechanisms: tuple[str, ...] = ()
    frozen: tuple[str, ...] = ()
    forced: bool = False

    @property
    def evaluated(self) -> bool:
        return self.val_bpb is not None

    def to_json(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "changes": dict(sorted(self.proposal.changes.items())) if self.proposal else None,
            "hypothesis": self.proposal.hypothesis if self.proposal else None,
            "origin": self.proposal.origin if self.proposal else None,
            "val_bpb": self.val_bpb,
            "kept": self.kept,
            "rejected_reason": self.rejected_reason,
            "forced": self.forced,
            "mechanisms": list(self.mechanisms),
            "frozen": list(self.frozen),
            "wall_cost": self.wall_cost,
            "config": dict(sorted(self.config.items())),
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class LandscapeSpec:
    baseline_low: float = 1.094
    baseline_high: float = 1.114
    contributions: Mapping[tuple[str, Any], float] = field(default_factory=lambda: DEFAULT_CONTRIBUTIONS)
    noise_sigma: float = 0.002
    seed: int = 0

    def __post_init__(self) -> None:
        if self.baseline_low > self.baseline_high:
            raise ValueError("baseline_low must not exceed baseline_high")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "contributions", MappingProxyType(dict(self.contributions)))

    def __hash__(self) -> int:
        return hash((self.baseline_low, self.baseline_high, tuple(sorted(self.contributions.items(), key=repr)),
                     self.noise_sigma, self.seed))


def landscape_delta(config: Configuration, spec: LandscapeSpec, space: ParameterSpace | None = None) -> float:
    """Noise-free sum of the contributions triggered by ``config``."""
    space = space if space is not None else default_space()
    total = 0.0
    for param in space:
        value = config[param.name]
        if param.equal(value, param.default):
            continue
        entries = [(key, d) for (name, key), d in spec.contributions.items() if name == param.name]
        hit = None
        for key, d in entries:
            if key not in (DECREASE, INCREASE) and param.contains(key) and param.equal(key, value):
                hit = d
                break
        if hit is None:
            direction = DECREASE if param.position(value) < param.position(param.default) else INCREASE
            hit = dict(entries).get(direction)
        if hit is not None:
            total += hit
    return total


@dataclass(frozen=True)
class RepeatContext:
    """Per-repeat randomness: one baseline draw plus a trial-indexed noise stream."""

    seed: int
    baseline: float
    landscape_seed: int = 0
    noise_sigma: float = 0.0

    @classmethod
    def draw(cls, spec: LandscapeSpec, seed: int) -> RepeatContext:
        if seed < 0:
            raise ValueError("seed must be non-negative")
        rng = np.random.default_rng([spec.seed, seed, 0])
        baseline = float(rng.uniform(spec.baseline_low, spec.baseline_high))
        return cls(seed=seed, baseline=baseline, landscape_seed=spec.seed, noise_sigma=spec.noise_sigma)

    def noise(self, trial_index: int) -> float:
        if self.noise_sigma == 0:
            return 0.0
        rng = np.random.default_rng([self.landscape_seed, self.seed, 1, trial_index])
        return float(rng.normal(0.0, self.noise_sigma))


def evaluate(
    config: Configuration,
    repeat_ctx: RepeatContext,
    spec: LandscapeSpec,
    iteration: int = 0,
    proposal: Proposal | None = None,
    space: ParameterSpace | None = None,
) -> TrialRecord:
    val = repeat_ctx.baseline + landscape_delta(config, spec, space) + repeat_ctx.noise(iteration)
    return TrialRecord(iteration=iteration, proposal=proposal, config=config, val_bpb=val)


class SurrogateEvaluator:
    """Callable evaluator bound to one repeat."""

    def __init__(self, spec: LandscapeSpec, repeat_ctx: RepeatContext, space: ParameterSpace | None = None):
        self.spec = spec
        self.repeat_ctx = repeat_ctx
        self.space = space if space is not None else default_space()

    def __call__(self, config: Configuration, iteration: int, proposal: Proposal | None = None) -> TrialRecord:
        return evaluate(config, self.repeat_ctx, self.spec, iteration, proposal, self.space)


_VAL_LINE = re.compile(r"^\s*val_bpb\s*[:=]\s*([-+0-9.eE]+)\s*$")


class CommandEvaluator:
    """Delegates evaluation to an external trainer.

    The command receives the configuration as JSON on stdin and must print a
    ``val_bpb: <float>`` line on stdout; the last such line wins.
    """

    def __init__(self, command: Sequence[str], timeout: float | None = None, wall_cost: float = TRIAL_SECONDS):
        self.command = list(command)
        self.timeout = timeout
        self.wall_cost = wall_cost

    def __call__(self, config: Configuration, iteration: int, proposal: Proposal | None = None) -> TrialRecord:
        payload = json.dumps({"iteration": iteration, "config": config.to_dict()}, sort_keys=True)
        done = subprocess.run(self.command, input=payload, capture_output=True, text=True,
                              timeout=self.timeout, check=True)
        val = None
        for line in done.stdout.splitlines():
            m = _VAL_LINE.match(line)
            if m:
                val = float(m.group(1))
        if val is None or not math.isfinite(val):
            raise RuntimeError(f"trainer printed no finite val_bpb line: {done.stdout[-200:]!r}")
        return TrialRecord(iteration=iteration, proposal=proposal, config=config, val_bpb=val,
                           wall_cost=self.wall_cost)


# -- file format -------------------------------------------------------------
#
#   baseline_low = 1.094
#   noise_sigma  = 0.002
#   delta WEIGHT_DECAY decrease = -0.008
#   delta TOTAL_BATCH_SIZE 17   = -0.060
#
# Any ``delta`` line replaces the whole default contribution table.


def parse_landscape(text: str) -> LandscapeSpec:
    scalars: dict[str, Any] = {}
    table: dict[tuple[str, Any], float] = {}
    for line_no, key, value in iter_key_values(text):
        parts = key.split()
        try:
            if parts[0] == "delta":
                if len(parts) != 3:
                    raise SpaceFileError(f"line {line_no}: expected 'delta PARAM VALUE = number'")
                table[(parts[1], parse_value(parts[2]))] = float(value)
            elif key in ("baseline_low", "baseline_high", "noise_sigma"):
                scalars[key] = float(value)
            elif key == "seed":
                scalars[key] = int(value)
            else:
                raise SpaceFileError(f"line {line_no}: unknown key {key!r}")
        except ValueError as exc:
            raise SpaceFileError(f"line {line_no}: {exc}") from exc
    if table:
        scalars["contributions"] = table
    try:
        return LandscapeSpec(**scalars)
    except ValueError as exc:
        raise SpaceFileError(str(exc)) from exc


def load_landscape(path: str | Path | None) -> LandscapeSpec:
    if path is None:
        return LandscapeSpec()
    return parse_landscape(Path(path).read_text())


def with_noise(spec: LandscapeSpec, noise_sigma: float | None) -> LandscapeSpec:
    return spec if noise_sigma is None else replace(spec, noise_sigma=noise_sigma)

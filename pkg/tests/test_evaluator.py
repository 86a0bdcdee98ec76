import math

import pytest

from bilevel_search.errors import SpaceFileError
from bilevel_search.evaluator import (
    DEFAULT_CONTRIBUTIONS,
    CommandEvaluator,
    LandscapeSpec,
    RepeatContext,
    evaluate,
    landscape_delta,
    parse_landscape,
)


def _table_sum(*keys):
    # hand oracle: add the calibration entries directly
    return sum(DEFAULT_CONTRIBUTIONS[k] for k in keys)


def test_baseline_delta_is_zero(space):
    assert landscape_delta(space.baseline(), LandscapeSpec()) == 0.0


def test_weight_decay_reduction(space):
    cfg = space.baseline().with_changes({"WEIGHT_DECAY": 0.05})
    assert landscape_delta(cfg, LandscapeSpec()) == pytest.approx(-0.008, abs=1e-12)


def test_additive_contributions(space):
    cfg = space.baseline().with_changes({"WEIGHT_DECAY": 0.05, "TOTAL_BATCH_SIZE": 17})
    expected = _table_sum(("WEIGHT_DECAY", "decrease"), ("TOTAL_BATCH_SIZE", 17))
    assert expected == pytest.approx(-0.068, abs=1e-12)
    assert landscape_delta(cfg, LandscapeSpec()) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("exp,delta", [(16, -0.050), (17, -0.060), (18, -0.039), (19, 0.0), (20, 0.020)])
def test_batch_landscape(space, exp, delta):
    cfg = space.baseline().with_changes({"TOTAL_BATCH_SIZE": exp})
    assert landscape_delta(cfg, LandscapeSpec()) == pytest.approx(delta, abs=1e-12)


def test_increase_trap_is_positive(space):
    assert landscape_delta(space.baseline().with_changes({"TOTAL_BATCH_SIZE": 20}), LandscapeSpec()) > 0


@pytest.mark.parametrize("changes", [{"LR": 0.004}, {"HEAD_DIM": 64}, {"WEIGHT_DECAY": 0.2},
                                     {"WINDOW_PATTERN": "LLLL"}, {"MATRIX_LR": 0.02}])
def test_flat_parameters(space, changes):
    assert landscape_delta(space.baseline().with_changes(changes), LandscapeSpec()) == 0.0


def test_zero_noise_identity(space):
    ctx = RepeatContext(seed=0, baseline=1.100)
    rec = evaluate(space.baseline(), ctx, LandscapeSpec(noise_sigma=0.0))
    assert rec.val_bpb == 1.100
    assert rec.wall_cost == 300.0


def test_zero_noise_batch_18(space):
    ctx = RepeatContext(seed=0, baseline=1.100)
    rec = evaluate(space.baseline().with_changes({"TOTAL_BATCH_SIZE": 18}), ctx, LandscapeSpec(noise_sigma=0.0))
    assert rec.val_bpb == pytest.approx(1.100 - 0.039, abs=1e-12)
    assert rec.val_bpb == pytest.approx(1.061, abs=1e-12)


def test_baseline_draws_in_reported_range():
    spec = LandscapeSpec()
    draws = [RepeatContext.draw(spec, s).baseline for s in range(500)]
    assert all(1.094 <= b <= 1.114 for b in draws)
    assert max(draws) - min(draws) > 0.015


def test_evaluation_is_deterministic(space):
    spec = LandscapeSpec(noise_sigma=0.002)
    cfg = space.baseline().with_changes({"LR": 0.004})
    a = evaluate(cfg, RepeatContext.draw(spec, 7), spec, iteration=5)
    b = evaluate(cfg, RepeatContext.draw(spec, 7), spec, iteration=5)
    assert a.val_bpb == b.val_bpb
    c = evaluate(cfg, RepeatContext.draw(spec, 7), spec, iteration=6)
    assert c.val_bpb != a.val_bpb


def test_zero_noise_difference_equals_delta(space):
    spec = LandscapeSpec(noise_sigma=0.0)
    ctx = RepeatContext.draw(spec, 3)
    cfg = space.baseline().with_changes({"TOTAL_BATCH_SIZE": 17, "WINDOW_PATTERN": "SSSS"})
    diff = evaluate(cfg, ctx, spec, 4).val_bpb - evaluate(space.baseline(), ctx, spec, 0).val_bpb
    assert diff == pytest.approx(landscape_delta(cfg, spec), abs=1e-12)


def test_noise_has_requested_scale(space):
    spec = LandscapeSpec(noise_sigma=0.002)
    ctx = RepeatContext.draw(spec, 1)
    noise = [ctx.noise(i) for i in range(4000)]
    mean = sum(noise) / len(noise)
    sd = math.sqrt(sum((n - mean) ** 2 for n in noise) / (len(noise) - 1))
    assert abs(mean) < 3 * 0.002 / math.sqrt(4000)
    assert sd == pytest.approx(0.002, rel=0.05)


def test_spec_invariants():
    with pytest.raises(ValueError):
        LandscapeSpec(baseline_low=1.2, baseline_high=1.1)
    with pytest.raises(ValueError):
        LandscapeSpec(noise_sigma=-1)


def test_landscape_file(space):
    spec = parse_landscape("""
        baseline_low = 1.0
        baseline_high = 1.0
        noise_sigma = 0
        seed = 4
        delta TOTAL_BATCH_SIZE 18 = -0.5
        delta WINDOW_PATTERN SSSS = -0.25
    """)
    assert spec.seed == 4 and spec.noise_sigma == 0.0
    cfg = space.baseline().with_changes({"TOTAL_BATCH_SIZE": 18, "WINDOW_PATTERN": "SSSS", "WEIGHT_DECAY": 0.0})
    assert landscape_delta(cfg, spec) == -0.75
    with pytest.raises(SpaceFileError):
        parse_landscape("bogus = 1\n")


def test_command_evaluator(tmp_path, space):
    script = tmp_path / "trainer.py"
    script.write_text(
        "import json, sys\n"
        "cfg = json.load(sys.stdin)['config']\n"
        "print('step 1 loss 3.2')\n"
        "print(f\"val_bpb: {1.0 + cfg['TOTAL_BATCH_SIZE'] / 1000}\")\n"
    )
    import sys

    ev = CommandEvaluator([sys.executable, str(script)])
    rec = ev(space.baseline(), 3)
    assert rec.iteration == 3 and rec.val_bpb == pytest.approx(1.019)

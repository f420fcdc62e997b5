import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadlayout.crf import AttributePrediction, onehot_prediction
from roadlayout.errors import PredictionError, SchemaMismatchError
from roadlayout.losses import (
    LossTerms,
    annotation_mask,
    domain_loss,
    mixed_loss,
    sample_loss,
    supervised_loss,
)
from roadlayout.schema import default_schema


def with_binary(pred, binary):
    return AttributePrediction(np.asarray(binary, dtype=float), pred.multiclass, pred.continuous)


def random_prediction(rng, specs):
    return AttributePrediction(
        rng.uniform(0, 1, 14),
        tuple(rng.dirichlet(np.ones(7)) for _ in range(2)),
        tuple(rng.dirichlet(np.ones(s.size)) for s in specs),
    )


def test_perfect_prediction_costs_nothing(scenes):
    for gt in scenes[:30]:
        terms = sample_loss(onehot_prediction(gt), gt)
        assert (terms.bce, terms.ce, terms.l1) == (0.0, 0.0, 0.0)


def test_half_probabilities_give_14_ln2(scenes):
    gt = scenes[0]
    pred = with_binary(onehot_prediction(gt), np.full(14, 0.5))
    assert abs(sample_loss(pred, gt).bce - 14 * math.log(2)) <= 1e-9


def test_ce_and_l1_hand_values(scenes, specs):
    gt = scenes[0]
    base = onehot_prediction(gt)
    mc = np.full(7, 1 / 7)
    pred = AttributePrediction(base.binary, (mc, base.multiclass[1]), base.continuous)
    assert sample_loss(pred, gt).ce == pytest.approx(math.log(7), abs=1e-12)
    # moving all mass of one continuous attribute elsewhere costs L1 = 2
    cont = list(base.continuous)
    target = cont[0]
    other = np.zeros_like(target)
    other[int(np.argmin(target))] = 1.0
    cont[0] = other
    pred = AttributePrediction(base.binary, base.multiclass, tuple(cont))
    expected = np.abs(other - target).sum()
    assert sample_loss(pred, gt).l1 == pytest.approx(expected, abs=1e-12)
    assert expected > 1.99


def test_degenerate_domain_weights(scenes, specs):
    rng = np.random.default_rng(0)
    real = ([random_prediction(rng, specs) for _ in range(3)], list(scenes[:3]))
    sim = ([random_prediction(rng, specs) for _ in range(3)], list(scenes[3:6]))
    mix = mixed_loss(real, sim, 1.0, 0.0)
    assert mix.combined == domain_loss(*real).total
    both = mixed_loss(real, sim, 0.3, 0.7)
    assert both.combined == pytest.approx(
        0.3 * domain_loss(*real).total + 0.7 * domain_loss(*sim).total, rel=1e-12
    )
    assert supervised_loss(real[0][0], real[1][0]).combined == sample_loss(
        real[0][0], real[1][0]
    ).total


@given(st.integers(0, 10_000), st.lists(st.booleans(), min_size=38, max_size=38))
@settings(max_examples=40, deadline=None)
def test_masking_never_increases_loss(seed, mask):
    from roadlayout.probability import bin_specs
    from roadlayout.sampler import PriorConfig, sample_scene

    rng = np.random.default_rng(seed)
    gt = sample_scene(PriorConfig(), seed)
    pred = random_prediction(rng, bin_specs())
    full = sample_loss(pred, gt)
    part = sample_loss(pred, gt, mask)
    assert part.bce <= full.bce and part.ce <= full.ce and part.l1 <= full.l1 + 1e-12


def test_mask_forms(scenes):
    names = default_schema().names
    assert annotation_mask(None) == (True,) * 38
    assert annotation_mask({"curvature": False}) == tuple(n != "curvature" for n in names)
    with pytest.raises(SchemaMismatchError):
        annotation_mask({"nope": True})
    with pytest.raises(SchemaMismatchError):
        annotation_mask([True] * 5)
    gt = scenes[0]
    pred = with_binary(onehot_prediction(gt), np.full(14, 0.5))
    masked = {n: False for n in default_schema().binary_names}
    assert sample_loss(pred, gt, masked).bce == 0.0


def test_probability_outside_unit_interval_rejected(scenes):
    with pytest.raises(PredictionError):
        with_binary(onehot_prediction(scenes[0]), np.full(14, 1.2))


def test_empty_domain_and_negative_weights(scenes):
    assert domain_loss([], []) == LossTerms()
    from roadlayout.errors import ConfigError
    from roadlayout.losses import LossBreakdown

    with pytest.raises(ConfigError):
        LossBreakdown.mix(LossTerms(), LossTerms(), -1.0, 1.0)
    with pytest.raises(SchemaMismatchError):
        domain_loss([onehot_prediction(scenes[0])], [])

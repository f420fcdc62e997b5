"""Supervised attribute loss for real and simulated training domains.

Per sample, the loss sums binary cross-entropy over the flags, categorical
cross-entropy over the lane counts and the elementwise L1 distance between
predicted and target bin distributions over the continuous attributes.
Attributes without annotation are skipped. Sample losses are averaged within
a domain, and the two domains are mixed with fixed weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from roadlayout.crf import PROB_FLOOR, AttributePrediction
from roadlayout.errors import ConfigError, SchemaMismatchError
from roadlayout.probability import BinSpec, bin_specs, discretize
from roadlayout.schema import SceneParams, default_schema


@dataclass(frozen=True)
class LossTerms:
    bce: float = 0.0
    ce: float = 0.0
    l1: float = 0.0

    @property
    def total(self) -> float:
        return self.bce + self.ce + self.l1


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted two-domain loss.

    ``combined`` is ``lambda_real * real.total + lambda_sim * sim.total``;
    the ``*_total`` fields apply the same weights to each loss type.
    """

    bce_total: float
    ce_total: float
    l1_total: float
    combined: float
    real: LossTerms
    sim: LossTerms
    lambda_real: float
    lambda_sim: float

    @classmethod
    def mix(cls, real: LossTerms, sim: LossTerms, lambda_real: float = 1.0, lambda_sim: float = 1.0):
        if lambda_real < 0 or lambda_sim < 0:
            raise ConfigError("domain weights must be nonnegative")
        return cls(
            bce_total=lambda_real * real.bce + lambda_sim * sim.bce,
            ce_total=lambda_real * real.ce + lambda_sim * sim.ce,
            l1_total=lambda_real * real.l1 + lambda_sim * sim.l1,
            combined=lambda_real * real.total + lambda_sim * sim.total,
            real=real,
            sim=sim,
            lambda_real=lambda_real,
            lambda_sim=lambda_sim,
        )


def annotation_mask(mask: Mapping[str, bool] | Sequence[bool] | None) -> tuple[bool, ...]:
    """Normalize a mask to one flag per attribute in schema order (default: all annotated).

    A mapping may list a subset of attributes; unlisted ones count as annotated.
    """
    schema = default_schema()
    if mask is None:
        return (True,) * len(schema.names)
    if isinstance(mask, Mapping):
        unknown = set(mask) - set(schema.names)
        if unknown:
            raise SchemaMismatchError(f"unknown attributes in mask: {', '.join(sorted(unknown))}")
        return tuple(bool(mask.get(n, True)) for n in schema.names)
    flags = tuple(bool(m) for m in mask)
    if len(flags) != len(schema.names):
        raise SchemaMismatchError(f"mask needs {len(schema.names)} entries, got {len(flags)}")
    return flags


def _nll(p: float) -> float:
    return -math.log(max(p, PROB_FLOOR))


def sample_loss(
    pred: AttributePrediction,
    gt: SceneParams,
    mask: Mapping[str, bool] | Sequence[bool] | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> LossTerms:
    """Loss of one sample, summed over annotated attributes."""
    specs = specs or bin_specs()
    pred.check_bins(specs)
    schema = default_schema()
    flags = annotation_mask(mask)
    nb, nm = schema.n_binary, schema.n_multiclass
    bce = sum(
        _nll(p if y else 1.0 - p)
        for p, y, m in zip(pred.binary, gt.binary, flags[:nb])
        if m
    )
    ce = sum(
        _nll(q[y]) for q, y, m in zip(pred.multiclass, gt.multiclass, flags[nb:nb + nm]) if m
    )
    l1 = 0.0
    for w, y, spec, m in zip(pred.continuous, gt.continuous, specs, flags[nb + nm:]):
        if m:
            l1 += float(np.abs(w - discretize(y, spec).weights).sum())
    return LossTerms(float(bce), float(ce), l1)


def domain_loss(
    preds: Sequence[AttributePrediction],
    gts: Sequence[SceneParams],
    masks: Sequence | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> LossTerms:
    """Mean of :func:`sample_loss` over one domain's samples."""
    if len(preds) != len(gts):
        raise SchemaMismatchError("predictions and ground truth differ in length")
    if not preds:
        return LossTerms()
    masks = masks if masks is not None else [None] * len(preds)
    terms = [sample_loss(p, g, m, specs) for p, g, m in zip(preds, gts, masks)]
    n = len(terms)
    return LossTerms(
        sum(t.bce for t in terms) / n, sum(t.ce for t in terms) / n, sum(t.l1 for t in terms) / n
    )


def supervised_loss(
    pred: AttributePrediction,
    gt: SceneParams,
    mask: Mapping[str, bool] | Sequence[bool] | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> LossBreakdown:
    """Loss of a single real-domain sample (``lambda_sim = 0``)."""
    return LossBreakdown.mix(sample_loss(pred, gt, mask, specs), LossTerms(), 1.0, 0.0)


def mixed_loss(
    real: tuple[Sequence[AttributePrediction], Sequence[SceneParams]],
    sim: tuple[Sequence[AttributePrediction], Sequence[SceneParams]],
    lambda_real: float = 1.0,
    lambda_sim: float = 1.0,
    real_masks: Sequence | None = None,
    sim_masks: Sequence | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> LossBreakdown:
    """Weighted sum of the real-domain and simulated-domain mean losses."""
    return LossBreakdown.mix(
        domain_loss(*real, real_masks, specs),
        domain_loss(*sim, sim_masks, specs),
        lambda_real,
        lambda_sim,
    )

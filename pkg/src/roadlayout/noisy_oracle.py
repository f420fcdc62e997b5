"""Synthetic attribute predictions with controlled, calibrated noise.

Stands in for a trained network: each attribute's favored value is the ground
truth unless an independent flip with rate ``epsilon`` replaces it, and the
emitted confidence in the favored value is ``1 - epsilon``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from roadlayout.crf import AttributePrediction
from roadlayout.errors import ConfigError
from roadlayout.probability import BinSpec, bin_specs, discretize
from roadlayout.rng import CounterRNG, split
from roadlayout.schema import SceneParams, default_schema


@dataclass(frozen=True)
class NoiseConfig:
    """Noise parameters.

    Attributes:
        epsilon: flip rate, also the mass left on the non-favored side.
        temperature: softmax temperature applied to one-hot lane-count logits.
        jitter: std of the Gaussian value noise, as a fraction of each range.
        seed: base seed.
    """

    epsilon: float = 0.15
    temperature: float = 0.5
    jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "NoiseConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown noise settings: {', '.join(sorted(unknown))}")
        return cls(**values)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def corrupt(
    gt: SceneParams,
    cfg: NoiseConfig = NoiseConfig(),
    seed: int | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> AttributePrediction:
    """One noisy prediction of ``gt``; ``seed`` overrides ``cfg.seed``.

    The random stream is consumed identically for every ``epsilon`` so that
    runs at different noise levels stay coupled.
    """
    specs = specs or bin_specs()
    schema = default_schema()
    rng = CounterRNG(cfg.seed if seed is None else seed)
    eps = cfg.epsilon

    binary = np.empty(schema.n_binary)
    for k, truth in enumerate(gt.binary):
        favored = truth != (rng.uniform() < eps)
        binary[k] = 1.0 - eps if favored else eps

    multiclass = []
    for truth, size in zip(gt.multiclass, schema.multiclass_sizes):
        flip = rng.uniform() < eps
        other = rng.randint(size - 1)
        favored = (other if other < truth else other + 1) if flip else truth
        logits = np.zeros(size)
        logits[favored] = 1.0
        multiclass.append(_softmax(logits / cfg.temperature))

    continuous = []
    for attr, spec, truth in zip(schema.continuous, specs, gt.continuous):
        flip = rng.uniform() < eps
        noise = rng.normal()
        spare = rng.uniform()
        if not spec.inactive:
            continuous.append(discretize(truth + noise * cfg.jitter * attr.span, spec).weights)
            continue
        w = np.empty(spec.size)
        if truth is not None:
            active = discretize(truth + noise * cfg.jitter * attr.span, spec).weights[1:]
            w[0], w[1:] = (1.0 - eps, eps * active) if flip else (eps, (1.0 - eps) * active)
        elif flip:
            active = discretize(attr.low + spare * attr.span, spec).weights[1:]
            w[0], w[1:] = eps, (1.0 - eps) * active
        else:
            w[0], w[1:] = 1.0 - eps, eps / spec.k
        continuous.append(w / w.sum())
    return AttributePrediction(binary, tuple(multiclass), tuple(continuous))


def corrupt_sequence(
    gt: SceneParams,
    n_frames: int,
    cfg: NoiseConfig = NoiseConfig(),
    seed: int | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> list[AttributePrediction]:
    """``n_frames`` independent corruptions of a static scene.

    A single frame reproduces :func:`corrupt` with the same seed; frame
    ``t > 0`` uses the sub-seed ``split(seed, t)``.
    """
    if n_frames < 1:
        raise ConfigError("a sequence needs at least one frame")
    base = cfg.seed if seed is None else seed
    seeds = [base] + [split(base, t) for t in range(1, n_frames)]
    return [corrupt(gt, cfg, s, specs) for s in seeds]


def corrupt_batch(
    scenes: Sequence[SceneParams], cfg: NoiseConfig = NoiseConfig()
) -> list[AttributePrediction]:
    """Corrupt scene ``i`` with sub-seed ``split(cfg.seed, i)``."""
    return [corrupt(s, cfg, split(cfg.seed, i)) for i, s in enumerate(scenes)]

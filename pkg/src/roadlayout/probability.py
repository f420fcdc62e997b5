"""K-bin soft labels for continuous attributes.

A value becomes a discrete distribution by placing a Gaussian of fixed width
on it and reading the density at the bin centers. Activatable attributes get
one extra bin at index 0 that stands for "attribute not present".
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from roadlayout.errors import ConfigError, PredictionError
from roadlayout.schema import AttributeSchema, ContinuousAttribute, default_schema

DEFAULT_BINS = 64
INACTIVE = 0


@dataclass(frozen=True)
class BinSpec:
    """Uniform bins over ``[low, high]`` plus an optional inactive bin at index 0.

    ``sigma`` is expressed in value units.
    """

    k: int
    low: float
    high: float
    sigma: float
    inactive: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("a bin spec needs at least two bins")
        if not self.low < self.high:
            raise ConfigError("bin range must satisfy low < high")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    @property
    def width(self) -> float:
        return (self.high - self.low) / self.k

    @property
    def size(self) -> int:
        """Number of entries of a distribution, inactive bin included."""
        return self.k + int(self.inactive)

    @property
    def offset(self) -> int:
        return int(self.inactive)

    @functools.cached_property
    def centers(self) -> np.ndarray:
        return self.low + (np.arange(self.k) + 0.5) * self.width

    def center(self, index: int) -> float | None:
        """Value represented by distribution index ``index`` (``None`` for inactive)."""
        if self.inactive and index == INACTIVE:
            return None
        return float(self.centers[index - self.offset])

    def index_of(self, value: float | None) -> int:
        """Distribution index of the bin containing ``value``."""
        if value is None:
            if not self.inactive:
                raise ValueError("attribute has no inactive state")
            return INACTIVE
        j = int(np.floor((value - self.low) / self.width))
        return min(max(j, 0), self.k - 1) + self.offset


@dataclass(frozen=True, eq=False)
class BinDistribution:
    weights: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or np.isnan(w).any() or (w < 0).any():
            raise PredictionError("bin weights must be a nonnegative 1-d vector without NaN")
        if abs(w.sum() - 1.0) > 1e-9:
            raise PredictionError(f"bin weights sum to {w.sum()!r}, expected 1")

    def __eq__(self, other):
        return isinstance(other, BinDistribution) and np.array_equal(self.weights, other.weights)

    def __len__(self) -> int:
        return len(self.weights)


def bin_spec_for(attr: ContinuousAttribute, k: int = DEFAULT_BINS, sigma_bins: float = 1.0) -> BinSpec:
    width = (attr.high - attr.low) / k
    return BinSpec(k, attr.low, attr.high, sigma_bins * width, attr.activatable)


@functools.lru_cache(maxsize=None)
def _default_specs(k: int, sigma_bins: float) -> tuple[BinSpec, ...]:
    return tuple(bin_spec_for(a, k, sigma_bins) for a in default_schema().continuous)


def bin_specs(
    schema: AttributeSchema | None = None, k: int = DEFAULT_BINS, sigma_bins: float = 1.0
) -> tuple[BinSpec, ...]:
    """One :class:`BinSpec` per continuous attribute, in schema order."""
    if schema is None or schema is default_schema():
        return _default_specs(k, sigma_bins)
    return tuple(bin_spec_for(a, k, sigma_bins) for a in schema.continuous)


def gaussian_bin_weights(value: float, spec: BinSpec) -> np.ndarray:
    """Normalized Gaussian weights over the active bins only (length ``spec.k``)."""
    z = (spec.centers - value) / spec.sigma
    logw = -0.5 * z * z
    w = np.exp(logw - logw.max())
    return w / w.sum()


def discretize(value: float | None, spec: BinSpec) -> BinDistribution:
    """Soft-label ``value``; ``None`` yields a one-hot on the inactive bin.

    Values outside the range are clamped to it and the result is flagged.
    """
    if value is None:
        if not spec.inactive:
            raise ValueError("attribute has no inactive state")
        w = np.zeros(spec.size)
        w[INACTIVE] = 1.0
        return BinDistribution(w)
    if not spec.sigma > 0:
        raise ConfigError("sigma must be positive")
    clamped = not spec.low <= value <= spec.high
    v = min(max(value, spec.low), spec.high)
    w = np.zeros(spec.size)
    w[spec.offset:] = gaussian_bin_weights(v, spec)
    return BinDistribution(w, clamped)


def decode_argmax(dist: BinDistribution | np.ndarray, spec: BinSpec) -> float | None:
    """Center of the heaviest bin (lowest index on ties); inactive bin decodes to ``None``."""
    w = _weights(dist)
    return spec.center(int(np.argmax(w)))


def decode_expectation(dist: BinDistribution | np.ndarray, spec: BinSpec) -> float | None:
    """Probability-weighted mean of the active bin centers.

    Returns ``None`` when the inactive bin is the heaviest single bin.
    """
    w = _weights(dist)
    if spec.inactive and int(np.argmax(w)) == INACTIVE:
        return None
    active = w[spec.offset:]
    mass = active.sum()
    if mass <= 0:
        return None
    return float(np.dot(active, spec.centers) / mass)


def argmax_index(dist: BinDistribution | np.ndarray) -> int:
    return int(np.argmax(_weights(dist)))


def _weights(dist) -> np.ndarray:
    return dist.weights if isinstance(dist, BinDistribution) else np.asarray(dist, dtype=float)

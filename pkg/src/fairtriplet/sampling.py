"""Group-sampling strategies and the FAR-driven dynamic weight scheduler.

Four strategies:

* ``natural``     - groups at their empirical dataset frequencies,
* ``fixed``       - groups at externally chosen weights,
* ``dynamic``     - weights recomputed from measured per-group FAR,
* ``homogeneous`` - one weighted group draw per batch, all samples from it.

Dynamic weights follow a power law w = FAR^lambda with lambda = log10(4), so
a 10-fold FAR increase quadruples a group's raw weight, smoothed across
epochs by exponential averaging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .core import Dataset, GroupTaxonomy, DEFAULT_TAXONOMY

FAR_WEIGHT_EXPONENT = math.log10(4.0)

VARIANTS = ("natural", "fixed", "dynamic", "homogeneous")


@dataclass(frozen=True)
class DynamicState:
    """Smoothed per-group weights plus the scheduler's knobs."""

    weights: dict[str, float]
    lam: float = FAR_WEIGHT_EXPONENT
    alpha_smooth: float = 0.2
    epoch: int = 0

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("dynamic state needs at least one group")
        if any(w <= 0 for w in self.weights.values()):
            raise ValueError("dynamic weights must be strictly positive")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if not 0.0 < self.alpha_smooth <= 1.0:
            raise ValueError("alpha_smooth must be in (0, 1]")

    @classmethod
    def uniform(cls, groups, lam: float = FAR_WEIGHT_EXPONENT,
                alpha_smooth: float = 0.2) -> "DynamicState":
        return cls(weights={g: 1.0 for g in groups}, lam=lam, alpha_smooth=alpha_smooth)


@dataclass(frozen=True)
class SamplerSpec:
    variant: str
    axis: str = "continent"
    weights: dict[str, float] | None = None   # fixed / homogeneous
    dynamic: DynamicState | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown sampler variant: {self.variant!r}")
        if self.variant in ("fixed", "homogeneous"):
            if not self.weights:
                raise ValueError(f"{self.variant} sampler needs weights")
            _check_weights(self.weights)
        if self.variant == "dynamic" and self.dynamic is None:
            raise ValueError("dynamic sampler needs a DynamicState")

    def with_dynamic(self, state: DynamicState) -> "SamplerSpec":
        return replace(self, dynamic=state)


def _check_weights(weights: Mapping[str, float]) -> None:
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be >= 0")
    if not any(w > 0 for w in weights.values()):
        raise ValueError("at least one weight must be positive")


def _normalized(weights: Mapping[str, float]) -> dict[str, float]:
    _check_weights(weights)
    total = float(sum(weights.values()))
    return {g: float(w) / total for g, w in weights.items()}


def probabilities(spec: SamplerSpec, dataset: Dataset) -> dict[str, float]:
    """Group -> sampling probability, summing to 1 (within float rounding).

    Natural uses the empirical dataset frequencies on the spec's axis; the
    weighted variants use their (normalized) weights. Positive-probability
    groups must be present in the dataset.
    """
    if spec.variant == "natural":
        tags = dataset.labels(spec.axis)
        n = len(dataset)
        counts = {g: int(np.sum(tags == g)) for g in dataset.taxonomy.groups(spec.axis)}
        out = {g: c / n for g, c in counts.items() if c > 0}
    elif spec.variant in ("fixed", "homogeneous"):
        out = _normalized(spec.weights)
    elif spec.variant == "dynamic":
        out = _normalized(spec.dynamic.weights)
    else:  # pragma: no cover - guarded by SamplerSpec
        raise ValueError(spec.variant)

    if spec.variant != "natural":
        index = dataset.group_index(spec.axis)
        missing = [g for g, p in out.items() if p > 0 and len(index.get(g, ())) == 0]
        if missing:
            raise ValueError(f"groups with positive weight absent from dataset: {missing}")
    return out


def raw_dynamic_weights(per_group_far: Mapping[str, float], lam: float,
                        far_floor: float) -> dict[str, float]:
    """Raw (unsmoothed) weights FAR^lam, with measured FARs floored.

    A measured FAR of zero is a resolution artifact; the floor (default: one
    over the impostor comparison count of the measurement) keeps weights
    positive and the power law meaningful.
    """
    if far_floor <= 0:
        raise ValueError("far_floor must be > 0")
    out = {}
    for g, f in per_group_far.items():
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"FAR for {g!r} out of [0, 1]: {f}")
        out[g] = max(f, far_floor) ** lam
    return out


def update_dynamic_weights(state: DynamicState, per_group_far: Mapping[str, float],
                           far_floor: float) -> DynamicState:
    """One exponential-averaging step toward the raw FAR-power weights.

    Computed incrementally as w + alpha * (w_raw - w) so that a raw weight
    equal to the current one is an exact fixed point; alpha_smooth == 1
    short-circuits to the raw weights exactly.
    """
    raw = raw_dynamic_weights(per_group_far, state.lam, far_floor)
    missing = set(state.weights) - set(raw)
    if missing:
        raise ValueError(f"per_group_far missing groups: {sorted(missing)}")
    if state.alpha_smooth == 1.0:
        new = {g: raw[g] for g in state.weights}
    else:
        new = {
            g: w + state.alpha_smooth * (raw[g] - w)
            for g, w in state.weights.items()
        }
    return replace(state, weights=new, epoch=state.epoch + 1)


def choose_homogeneous_group(weights: Mapping[str, float],
                             rng: np.random.Generator) -> str:
    """Pick the single group a homogeneous batch is drawn from."""
    probs = _normalized(weights)
    groups = list(probs)
    idx = rng.choice(len(groups), p=np.array([probs[g] for g in groups]))
    return groups[int(idx)]


def equal_weights(groups) -> dict[str, float]:
    return {g: 1.0 for g in groups}


def continent_adjusted_weights() -> dict[str, float]:
    """Continent preset: upweight the two worst-performing continents."""
    return {"EU": 1.0, "AM": 1.0, "OC": 1.0, "UN": 1.0, "AF": 3.0, "AS": 3.0}


def country_adjusted_weights(taxonomy: GroupTaxonomy = DEFAULT_TAXONOMY) -> dict[str, float]:
    """Country preset: weight 4 for every country in AF, AS, and AM except
    usa and canada; weight 1 elsewhere."""
    out = {}
    for country in taxonomy.countries:
        cont = taxonomy.continent_of(country)
        boosted = cont in ("AF", "AS") or (cont == "AM" and country not in ("usa", "canada"))
        out[country] = 4.0 if boosted else 1.0
    return out


def preset_weights(name: str, axis: str,
                   taxonomy: GroupTaxonomy = DEFAULT_TAXONOMY) -> dict[str, float]:
    """Named weight presets for config files."""
    if name == "equal":
        return equal_weights(taxonomy.groups(axis))
    if name == "adjusted":
        if axis == "continent":
            return continent_adjusted_weights()
        if axis == "country":
            return country_adjusted_weights(taxonomy)
    raise ValueError(f"unknown weight preset {name!r} for axis {axis!r}")

"""Trigger functions: commit to the most probable hypothesis now, or wait.

Every variant fires when a linear form in the sorted probabilities is
strictly positive and waits when it is ``<= 0``:

    s1: g1 p' + g2 (p' - p'') + g3 t / T
    s2: g1 p' + g2 p''        + g3 (eta - t) / eta
    s3: g1 p' + g2 (p' - p'') + g3
    s4: g1 p' + g2 (p' - p'')

``p'`` and ``p''`` are the highest and second-highest hypothesis
probabilities at step ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

DEFAULT_HORIZON = 1200
GAMMA_LENGTH = {"s1": 3, "s2": 3, "s3": 3, "s4": 2}
METHOD_NAMES = {"s1": "METSC", "s2": "MEOTSC", "s3": "SMEOTSC1", "s4": "SMEOTSC2"}


@dataclass(frozen=True)
class TriggerParams:
    variant: str
    gamma: tuple
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        variant = self.variant.lower()
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if variant not in GAMMA_LENGTH:
            raise ValueError(f"unknown trigger variant {self.variant!r}")
        if len(self.gamma) != GAMMA_LENGTH[variant]:
            raise ValueError(f"{variant} takes {GAMMA_LENGTH[variant]} gamma values, got {len(self.gamma)}")
        if any(not -1.0 <= g <= 1.0 for g in self.gamma):
            raise ValueError(f"gamma components must lie in [-1, 1]: {self.gamma}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "gamma": list(self.gamma), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TriggerParams":
        return cls(data["variant"], tuple(data["gamma"]), int(data.get("horizon", DEFAULT_HORIZON)))


@dataclass(frozen=True)
class SortedProbs:
    p_prime: float
    p_second: float
    argmax_id: int
    t: int


class NoActiveHypotheses(ValueError):
    pass


def sort_probs(probs: Mapping[int, float], t: int) -> SortedProbs:
    """Top two probabilities; the lowest id wins ties. ``p''`` is 0 for a lone hypothesis."""
    if not probs:
        raise NoActiveHypotheses("no active hypotheses to rank")
    order = sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))
    second = order[1][1] if len(order) > 1 else 0.0
    return SortedProbs(float(order[0][1]), float(second), int(order[0][0]), t)


def _linear_form(variant: str, gamma, p1, p2, t, horizon):
    g = gamma
    if variant == "s1":
        return g[0] * p1 + g[1] * (p1 - p2) + g[2] * np.minimum(t / horizon, 1.0)
    if variant == "s2":
        return g[0] * p1 + g[1] * p2 + g[2] * np.maximum((horizon - t) / horizon, 0.0)
    if variant == "s3":
        return g[0] * p1 + g[1] * (p1 - p2) + g[2]
    return g[0] * p1 + g[1] * (p1 - p2)


def _check(params: TriggerParams, variant: str):
    if params.variant != variant:
        raise ValueError(f"params are for {params.variant}, not {variant}")


def s1(sp: SortedProbs, params: TriggerParams) -> int:
    _check(params, "s1")
    return int(_linear_form("s1", params.gamma, sp.p_prime, sp.p_second, sp.t, params.horizon) > 0)


def s2(sp: SortedProbs, params: TriggerParams) -> int:
    _check(params, "s2")
    return int(_linear_form("s2", params.gamma, sp.p_prime, sp.p_second, sp.t, params.horizon) > 0)


def s3(sp: SortedProbs, params: TriggerParams) -> int:
    _check(params, "s3")
    return int(_linear_form("s3", params.gamma, sp.p_prime, sp.p_second, sp.t, params.horizon) > 0)


def s4(sp: SortedProbs, params: TriggerParams) -> int:
    _check(params, "s4")
    return int(_linear_form("s4", params.gamma, sp.p_prime, sp.p_second, sp.t, params.horizon) > 0)


TRIGGERS = {"s1": s1, "s2": s2, "s3": s3, "s4": s4}


def fire(sp: SortedProbs, params: TriggerParams) -> int:
    return TRIGGERS[params.variant](sp, params)


def fire_array(params: TriggerParams, p1: np.ndarray, p2: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorized trigger decisions over aligned arrays of ``p'``, ``p''`` and ``t``."""
    return _linear_form(params.variant, params.gamma, p1, p2, t, params.horizon) > 0

"""Rule-based element temperatures: a linear growth stage then ISO 834.

All temperatures are rises above ambient, in degrees Celsius; times are in
minutes and distances in meters.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .structgen import FirePoint, Structure

ISO_COEF = 345.0
ISO_RATE = 8.0


@dataclass(frozen=True)
class SpreadParams:
    r_up: float = 0.95
    r_down: float = 0.97
    beta_up_base: float = 16.0
    beta_horizontal: float = 18.0
    beta_down_base: float = 30.0
    alpha_up: float = 10.0
    alpha_horizontal: float = 18.0
    alpha_down: float = 5.0
    t_threshold: float = 60.0

    def __post_init__(self):
        for name in ("beta_up_base", "beta_horizontal", "beta_down_base",
                     "alpha_up", "alpha_horizontal", "alpha_down", "t_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.r_up < 1 and 0 < self.r_down < 1):
            raise ValueError("spread ratios must lie in (0, 1)")

    def beta_up(self, dh: int) -> float:
        return self.beta_up_base * (1 - self.r_up ** abs(dh)) / (1 - self.r_up)

    def beta_down(self, dh: int) -> float:
        return self.beta_down_base * (1 - self.r_down ** abs(dh)) / (1 - self.r_down)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TempCurve:
    c: float
    t1: float
    t_threshold: float = 60.0


def rate_c(h: int, h_f: int) -> float:
    """Slope of the growth stage in degC/min."""
    if h >= h_f:
        return 5.0 / (h - h_f + 1)
    return 2.0 / (h_f - h)


def arrival_t1(mid, h: int, fire: FirePoint, params: SpreadParams = SpreadParams()) -> float:
    """Time at which the element at ``mid`` (floor ``h``) enters the ISO 834 regime."""
    dx, dy, dz = mid[0] - fire.x_f, mid[1] - fire.y_f, mid[2] - fire.z_f
    if h == fire.h_f:
        lp = math.hypot(dx, dy)
        return params.beta_horizontal * (1 - math.exp(-lp / params.alpha_horizontal))
    ls = math.sqrt(dx * dx + dy * dy + dz * dz)
    dh = h - fire.h_f
    if dh > 0:
        return params.beta_up(dh) * (1 - math.exp(-ls / params.alpha_up))
    return params.beta_down(dh) * (1 - math.exp(-ls / params.alpha_down))


def temperature_at(t: float, curve: TempCurve) -> float:
    if t < 0 or t > curve.t_threshold:
        raise DomainError(f"t={t} outside [0, {curve.t_threshold}]")
    if t < curve.t1:
        return curve.c * t
    return curve.c * curve.t1 + ISO_COEF * math.log10(ISO_RATE * (t - curve.t1) + 1)


def element_curves(structure: Structure, fire: FirePoint,
                   params: SpreadParams = SpreadParams()) -> list[TempCurve]:
    mids = structure.element_midpoints()
    return [
        TempCurve(rate_c(e.floor, fire.h_f), arrival_t1(m, e.floor, fire, params), params.t_threshold)
        for e, m in zip(structure.elements, mids)
    ]


def element_temperature_array(structure: Structure, fire: FirePoint,
                              params: SpreadParams = SpreadParams()) -> np.ndarray:
    """Temperature rise of every element at the cutoff time, in element order."""
    t = params.t_threshold
    return np.array([temperature_at(t, c) for c in element_curves(structure, fire, params)])


def element_temperatures(structure: Structure, fire: FirePoint,
                         params: SpreadParams = SpreadParams()) -> dict[int, float]:
    temps = element_temperature_array(structure, fire, params)
    return {e.id: float(v) for e, v in zip(structure.elements, temps)}

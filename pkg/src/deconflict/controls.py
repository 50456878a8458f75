"""Control bounds and uncertainty parameters shared by the builders and audits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import InvalidGamma

PerAircraft = Union[float, Sequence[float]]


@dataclass(frozen=True)
class ControlSpec:
    """Speed-ratio and heading-deviation bounds plus the speed/heading weight ``w``.

    Defaults are the subliminal speed range [-6%, +3%] and a +/-30 degree heading range.
    """

    q_lo: float = 0.94
    q_hi: float = 1.03
    th_lo: float = -math.pi / 6
    th_hi: float = math.pi / 6
    w: float = 0.5

    def __post_init__(self):
        if not (0 < self.q_lo <= 1 <= self.q_hi):
            raise ValueError(f"need 0 < q_lo <= 1 <= q_hi, got [{self.q_lo}, {self.q_hi}]")
        if not (self.th_lo <= 0 <= self.th_hi):
            raise ValueError(f"need th_lo <= 0 <= th_hi, got [{self.th_lo}, {self.th_hi}]")
        if max(abs(self.th_lo), abs(self.th_hi)) >= math.pi / 2:
            raise ValueError("heading deviations must stay strictly inside (-pi/2, pi/2)")
        if not (0 < self.w < 1):
            raise ValueError(f"w must lie in (0, 1), got {self.w}")

    @property
    def th_abs_max(self) -> float:
        return max(abs(self.th_lo), abs(self.th_hi))


@dataclass(frozen=True)
class UncertaintySpec:
    """Maximum relative perturbation of each velocity component and the budget ``gamma``.

    ``eps_x``/``eps_y`` are either one value for every aircraft or one value per aircraft.
    """

    eps_x: PerAircraft = 0.0
    eps_y: PerAircraft = 0.0
    gamma: float = 4.0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 4.0) or math.isnan(self.gamma):
            raise InvalidGamma(f"gamma must lie in [0, 4], got {self.gamma}")
        for name in ("eps_x", "eps_y"):
            value = getattr(self, name)
            if isinstance(value, (int, float)):
                bad = value < 0
            else:
                object.__setattr__(self, name, tuple(float(e) for e in value))
                bad = any(e < 0 for e in getattr(self, name))
            if bad:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def uniform(cls, eps: float, gamma: float) -> "UncertaintySpec":
        return cls(eps_x=eps, eps_y=eps, gamma=gamma)

    def eps(self, i: int) -> tuple[float, float]:
        ex = self.eps_x if isinstance(self.eps_x, (int, float)) else self.eps_x[i]
        ey = self.eps_y if isinstance(self.eps_y, (int, float)) else self.eps_y[i]
        return float(ex), float(ey)

    def is_zero(self, n: int) -> bool:
        return all(self.eps(i) == (0.0, 0.0) for i in range(n))

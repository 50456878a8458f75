"""Pairwise separation geometry on the flat 2-D plane.

Positions are in NM, speeds in NM/h, angles in radians with x = cos and y = sin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

from .controls import ControlSpec
from .errors import InitialLoss

EPS_DIV = 1e-9  # (NM/h)^2; below this the pair keeps a constant distance


def normalize_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    return math.pi if r <= -math.pi else r


@dataclass(frozen=True)
class AircraftState:
    x0: float
    y0: float
    speed: float
    heading: float

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def velocity(self, q: float = 1.0, theta: float = 0.0) -> tuple[float, float]:
        s = q * self.speed
        return s * math.cos(self.heading + theta), s * math.sin(self.heading + theta)


@dataclass(frozen=True)
class Instance:
    id: str
    aircraft: tuple[AircraftState, ...]
    d: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        if len(self.aircraft) < 2:
            raise ValueError("an instance needs at least 2 aircraft")
        if not self.d > 0:
            raise ValueError("separation norm d must be positive")
        for i, j in self.pairs:
            a, b = self.aircraft[i], self.aircraft[j]
            if (a.x0 - b.x0) ** 2 + (a.y0 - b.y0) ** 2 < self.d ** 2:
                raise InitialLoss(f"{self.id}: aircraft {i} and {j} start closer than d={self.d}", (i, j))

    @property
    def n(self) -> int:
        return len(self.aircraft)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(len(self.aircraft)), 2))


@dataclass(frozen=True)
class RelativeVelocity:
    vx: float
    vy: float

    @property
    def norm2(self) -> float:
        return self.vx * self.vx + self.vy * self.vy


@dataclass(frozen=True)
class VelocityBox:
    vx_lo: float
    vx_hi: float
    vy_lo: float
    vy_hi: float

    def contains(self, v: RelativeVelocity, tol: float = 0.0) -> bool:
        return (self.vx_lo - tol <= v.vx <= self.vx_hi + tol
                and self.vy_lo - tol <= v.vy <= self.vy_hi + tol)


@dataclass(frozen=True)
class PairGeometry:
    """Initial relative position of a pair and the two boundary lines of its conflict region.

    The conflict region is the open wedge
    ``{v : vx*gamma_l - vy*phi_l > 0 and vx*gamma_u - vy*phi_u < 0}``.
    ``(phi_l, gamma_l)`` and ``(phi_u, gamma_u)`` are the unit directions of the two
    boundary rays, i.e. the head-on direction rotated by +/- asin(d/|p|).
    """

    i: int
    j: int
    dx0: float
    dy0: float
    gamma_l: float
    phi_l: float
    gamma_u: float
    phi_u: float
    d: float = 5.0

    def lower_value(self, vx: float, vy: float) -> float:
        return vx * self.gamma_l - vy * self.phi_l

    def upper_value(self, vx: float, vy: float) -> float:
        return vx * self.gamma_u - vy * self.phi_u

    def contains(self, v: RelativeVelocity, tol: float = 0.0) -> bool:
        """Strict membership in the conflict wedge (``tol`` shrinks it)."""
        return self.lower_value(v.vx, v.vy) > tol and self.upper_value(v.vx, v.vy) < -tol


@dataclass(frozen=True)
class PairAssessment:
    t_min: float
    d_min: float
    g: float
    in_conflict: bool


@dataclass(frozen=True)
class ConflictReport:
    assessments: dict[tuple[int, int], PairAssessment] = field(default_factory=dict)

    @property
    def n_conflicts(self) -> int:
        return sum(a.in_conflict for a in self.assessments.values())

    @property
    def d_min_total(self) -> float:
        return math.fsum(a.d_min for a in self.assessments.values())

    def conflicting_pairs(self) -> list[tuple[int, int]]:
        return [p for p, a in self.assessments.items() if a.in_conflict]


def relative_state(instance: Instance, i: int, j: int,
                   controls: Sequence[tuple[float, float]] | None = None):
    """Initial relative position ``(dx0, dy0)`` of i w.r.t. j and their relative velocity.

    ``controls`` holds one ``(q, theta)`` per aircraft; nominal controls when omitted.
    """
    n = instance.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pair ({i}, {j}) out of range for {n} aircraft")
    if i >= j:
        raise ValueError(f"need i < j, got ({i}, {j})")
    a, b = instance.aircraft[i], instance.aircraft[j]
    qa, ta = controls[i] if controls is not None else (1.0, 0.0)
    qb, tb = controls[j] if controls is not None else (1.0, 0.0)
    vax, vay = a.velocity(qa, ta)
    vbx, vby = b.velocity(qb, tb)
    return a.x0 - b.x0, a.y0 - b.y0, RelativeVelocity(vax - vbx, vay - vby)


def closest_approach(dx0: float, dy0: float, v: RelativeVelocity) -> tuple[float, float]:
    """Time of closest approach (h, unclamped) and minimal distance over t >= 0 (NM)."""
    nv = v.norm2
    if nv < EPS_DIV:
        return 0.0, math.hypot(dx0, dy0)
    t_min = -(dx0 * v.vx + dy0 * v.vy) / nv
    if t_min <= 0:
        return t_min, math.hypot(dx0, dy0)
    return t_min, math.hypot(dx0 + v.vx * t_min, dy0 + v.vy * t_min)


def g_value(dx0: float, dy0: float, v: RelativeVelocity, d: float) -> float:
    return (v.vy ** 2 * (dx0 ** 2 - d ** 2) + v.vx ** 2 * (dy0 ** 2 - d ** 2)
            - 2.0 * dx0 * dy0 * v.vx * v.vy)


def _check_separated(dx0: float, dy0: float, d: float, pair=None):
    if dx0 * dx0 + dy0 * dy0 < d * d:
        raise InitialLoss(f"initial distance {math.hypot(dx0, dy0):.6g} below d={d}", pair)


def assess_pair(dx0: float, dy0: float, v: RelativeVelocity, d: float, pair=None) -> PairAssessment:
    _check_separated(dx0, dy0, d, pair)
    t_min, d_min = closest_approach(dx0, dy0, v)
    g = g_value(dx0, dy0, v, d)
    if v.norm2 < EPS_DIV:
        return PairAssessment(t_min, d_min, g, False)
    return PairAssessment(t_min, d_min, g, not (g >= 0 or t_min <= 0))


def conflict_region(dx0: float, dy0: float, d: float, i: int = 0, j: int = 1) -> PairGeometry:
    _check_separated(dx0, dy0, d, (i, j))
    r = math.hypot(dx0, dy0)
    half = math.asin(min(1.0, d / r))
    hx, hy = -dx0 / r, -dy0 / r
    c, s = math.cos(half), math.sin(half)
    # head-on direction rotated counter-clockwise (lower role) and clockwise (upper role)
    lx, ly = c * hx - s * hy, s * hx + c * hy
    ux, uy = c * hx + s * hy, -s * hx + c * hy
    return PairGeometry(i, j, dx0, dy0, gamma_l=ly, phi_l=lx, gamma_u=uy, phi_u=ux, d=d)


def _cos_range(lo: float, hi: float) -> tuple[float, float]:
    """Range of cos over the angle interval [lo, hi] (hi - lo < 2 pi)."""
    vals = [math.cos(lo), math.cos(hi)]
    k_max = math.ceil(lo / (2 * math.pi))
    top = 1.0 if 2 * math.pi * k_max <= hi else max(vals)
    k_min = math.ceil((lo - math.pi) / (2 * math.pi))
    bottom = -1.0 if math.pi + 2 * math.pi * k_min <= hi else min(vals)
    return bottom, top


def component_range(state: AircraftState, c: ControlSpec, axis: int) -> tuple[float, float]:
    """Exact range of one velocity component of an aircraft over its control box."""
    lo, hi = state.heading + c.th_lo, state.heading + c.th_hi
    if axis == 0:
        cmin, cmax = _cos_range(lo, hi)
    else:  # sin(x) = cos(x - pi/2)
        cmin, cmax = _cos_range(lo - math.pi / 2, hi - math.pi / 2)
    s = state.speed
    cands = [q * s * cv for q in (c.q_lo, c.q_hi) for cv in (cmin, cmax)]
    return min(cands), max(cands)


def relative_velocity_box(a: AircraftState, b: AircraftState, c: ControlSpec) -> VelocityBox:
    """Interval bounds on the relative velocity of ``a`` w.r.t. ``b`` over both control boxes."""
    axl, axh = component_range(a, c, 0)
    ayl, ayh = component_range(a, c, 1)
    bxl, bxh = component_range(b, c, 0)
    byl, byh = component_range(b, c, 1)
    return VelocityBox(axl - bxh, axh - bxl, ayl - byh, ayh - byl)


def detect_conflicts(instance: Instance,
                     controls: Sequence[tuple[float, float]] | None = None,
                     pairs: Iterable[tuple[int, int]] | None = None) -> ConflictReport:
    """Assess every pair (or the given ones) at nominal or supplied controls."""
    out = {}
    for i, j in (pairs if pairs is not None else instance.pairs):
        dx0, dy0, v = relative_state(instance, i, j, controls)
        out[(i, j)] = assess_pair(dx0, dy0, v, instance.d, pair=(i, j))
    return ConflictReport(out)

"""Deterministic and robust conflict-resolution models in delta-space.

Each aircraft i is controlled through ``delta_i = q_i * (cos theta_i, sin theta_i)``; its
velocity is the nominal velocity rotated and scaled by ``delta_i``. Separation is one
binary per pair choosing between two indicator groups of linear constraints.

Variable layout of a :class:`ModelIR`::

    delta   2i, 2i+1                    (x, y) for aircraft i
    nu      2n + 2i, 2n + 2i + 1        robust models only
    psi     base_psi + 4p + k           k indexes KINDS
    rho     base_rho + 16p + 4k + 2l + a  l = 0 for i, 1 for j; a = 0 for x, 1 for y

Velocity-valued quantities (nominal rows, nu) are expressed in units of ``vref`` NM/h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .controls import ControlSpec, UncertaintySpec
from .errors import DegenerateDelta, InvalidGamma
from .geometry import (AircraftState, Instance, PairGeometry, VelocityBox, component_range,
                       conflict_region, relative_velocity_box)

KINDS = ("N1", "N0", "S1", "S0")
ALPHA = {"N1": 1, "N0": 0, "S1": 1, "S0": 0}


@dataclass(frozen=True)
class Row:
    """Sparse linear constraint ``sum(coef * x[idx]) <= rhs``."""

    idx: tuple[int, ...]
    coef: tuple[float, ...]
    rhs: float = 0.0
    label: str = ""

    def value(self, x) -> float:
        return math.fsum(c * x[i] for i, c in zip(self.idx, self.coef)) - self.rhs


@dataclass(frozen=True)
class ProtectedRow:
    """One separation constraint of a pair with its worst-case deviation terms.

    Nominal part: ``coef . (delta_ix, delta_iy, delta_jx, delta_jy) <= 0``. ``dev`` lists
    four ``(nu_index, weight)`` terms whose adversarial sum under the budget protects the
    row; empty for deterministic models.
    """

    kind: str
    pair: int
    z: int
    delta_idx: tuple[int, int, int, int]
    coef: tuple[float, float, float, float]
    dev: tuple[tuple[int, float], ...] = ()
    psi: int = -1
    rho: tuple[int, ...] = ()


@dataclass(frozen=True)
class ModelIR:
    kind: str  # "deterministic" | "robust"
    instance: Instance
    control: ControlSpec
    uncertainty: UncertaintySpec | None
    vref: float
    var_names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    obj_diag: np.ndarray      # objective is 0.5 x'Hx + c'x + const with H diagonal
    obj_lin: np.ndarray
    obj_const: float
    linear: tuple[Row, ...]   # always-on rows
    groups: dict[tuple[int, int], tuple[Row, ...]]  # (pair index, z) -> rows
    protected: dict[tuple[int, int], tuple[ProtectedRow, ...]]
    caps: tuple[tuple[int, float], ...]    # (aircraft, q_hi): |delta_i|^2 <= q_hi^2
    floors: tuple[tuple[int, float], ...]  # (aircraft, q_lo): |delta_i|^2 >= q_lo^2
    pairs: tuple[tuple[int, int], ...]
    geometry: tuple[PairGeometry, ...]
    boxes: tuple[VelocityBox, ...]         # redundant bounds on each relative velocity
    gamma: float = 0.0
    protection: str = "standard"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.instance.n

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_binaries(self) -> int:
        return len(self.pairs)

    def var_index(self, name: str) -> int:
        return self.var_names.index(name)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.obj_diag * x) + self.obj_lin @ x + self.obj_const)


# ---------------------------------------------------------------- small operations

def delta_bounds(c: ControlSpec) -> tuple[tuple[float, float], tuple[float, float]]:
    return ((c.q_lo * math.cos(c.th_abs_max), c.q_hi),
            (c.q_hi * math.sin(c.th_lo), c.q_hi * math.sin(c.th_hi)))


def velocity_affine(a: AircraftState) -> np.ndarray:
    """Matrix M with ``v_i = M @ delta_i`` (NM/h): the nominal velocity rotated by delta."""
    c, s = math.cos(a.heading), math.sin(a.heading)
    return a.speed * np.array([[c, -s], [s, c]])


def heading_cone(c: ControlSpec) -> list[tuple[float, float]]:
    """Coefficients ``(cx, cy)`` of the rows ``cx*delta_x + cy*delta_y <= 0``."""
    return [(math.tan(c.th_lo), -1.0), (-math.tan(c.th_hi), 1.0)]


def separation_rows(pg: PairGeometry) -> dict[int, list[tuple[str, float, float]]]:
    """Indicator groups as ``(kind, a, b)`` meaning ``a*v_x + b*v_y <= 0`` on the relative velocity.

    ``z = 1`` keeps the velocity on the counter-clockwise side of the line through the
    relative position and outside the lower boundary ray; ``z = 0`` mirrors it clockwise.
    """
    r = math.hypot(pg.dx0, pg.dy0)
    px, py = pg.dx0 / r, pg.dy0 / r
    return {
        1: [("N1", -py, px), ("S1", pg.gamma_l, -pg.phi_l)],
        0: [("N0", py, -px), ("S0", -pg.gamma_u, pg.phi_u)],
    }


def random_velocity_box(box: VelocityBox, eps_i: tuple[float, float], eps_j: tuple[float, float],
                        vmax_i: tuple[float, float], vmax_j: tuple[float, float]) -> VelocityBox:
    """Inflate a relative velocity box by the hull of ``v_i*eps_i - v_j*eps_j``.

    ``vmax_*`` are the largest absolute velocity components each aircraft can reach.
    """
    gx = eps_i[0] * vmax_i[0] + eps_j[0] * vmax_j[0]
    gy = eps_i[1] * vmax_i[1] + eps_j[1] * vmax_j[1]
    return VelocityBox(box.vx_lo - gx, box.vx_hi + gx, box.vy_lo - gy, box.vy_hi + gy)


def max_abs_components(a: AircraftState, c: ControlSpec) -> tuple[float, float]:
    return tuple(max(abs(v) for v in component_range(a, c, axis)) for axis in (0, 1))


def random_velocity_box_for(inst: Instance, c: ControlSpec, u: UncertaintySpec,
                            i: int, j: int) -> VelocityBox:
    a, b = inst.aircraft[i], inst.aircraft[j]
    return random_velocity_box(relative_velocity_box(a, b, c), u.eps(i), u.eps(j),
                               max_abs_components(a, c), max_abs_components(b, c))


def recover_controls(deltas: Sequence[Sequence[float]], w: float = 0.5):
    """Per-aircraft ``(q, theta)`` from delta and the speed/heading objective they score."""
    out = []
    for k, (dx, dy) in enumerate(deltas):
        if not dx > 0:
            raise DegenerateDelta(f"aircraft {k}: delta_x = {dx} must be positive")
        out.append((math.hypot(dx, dy), math.atan2(dy, dx)))
    obj = math.fsum((1 - w) * (1 - q) ** 2 + w * t * t for q, t in out)
    return out, obj


def surrogate_objective(deltas: Sequence[Sequence[float]], w: float = 0.5) -> float:
    return math.fsum((1 - w) * (1 - dx) ** 2 + w * dy * dy for dx, dy in deltas)


# ---------------------------------------------------------------- builders

def _base(inst: Instance, c: ControlSpec):
    n = inst.n
    names = [f"dx{i}" if a == 0 else f"dy{i}" for i in range(n) for a in (0, 1)]
    (xl, xh), (yl, yh) = delta_bounds(c)
    lb = [xl if a == 0 else yl for _ in range(n) for a in (0, 1)]
    ub = [xh if a == 0 else yh for _ in range(n) for a in (0, 1)]
    diag = [2 * (1 - c.w) if a == 0 else 2 * c.w for _ in range(n) for a in (0, 1)]
    lin = [-2 * (1 - c.w) if a == 0 else 0.0 for _ in range(n) for a in (0, 1)]
    rows = []
    for i in range(n):
        for k, (cx, cy) in enumerate(heading_cone(c)):
            rows.append(Row((2 * i, 2 * i + 1), (cx, cy), 0.0, f"cone{'LU'[k]}{i}"))
    return names, lb, ub, diag, lin, rows


def build_deterministic(inst: Instance, c: ControlSpec) -> ModelIR:
    return _build(inst, c, None, "standard")


def build_robust(inst: Instance, c: ControlSpec, u: UncertaintySpec,
                 protection: str = "standard") -> ModelIR:
    """Robust counterpart with budget ``u.gamma``.

    ``protection="standard"`` weights each deviation term by the row coefficient and the
    aircraft's own bound; ``"literal"`` uses the unweighted first-aircraft bound for both
    aircraft of the pair.
    """
    if not (0.0 <= u.gamma <= 4.0):
        raise InvalidGamma(f"gamma must lie in [0, 4], got {u.gamma}")
    if protection not in ("standard", "literal"):
        raise ValueError(f"unknown protection variant {protection!r}")
    return _build(inst, c, u, protection)


def _build(inst: Instance, c: ControlSpec, u: UncertaintySpec | None, protection: str) -> ModelIR:
    robust = u is not None
    n = inst.n
    pairs = tuple(combinations(range(n), 2))
    vref = max(a.speed for a in inst.aircraft)
    names, lb, ub, diag, lin, rows = _base(inst, c)
    mats = [velocity_affine(a) / vref for a in inst.aircraft]

    base_nu = 2 * n
    base_psi = base_nu + 2 * n
    base_rho = base_psi + 4 * len(pairs)
    if robust:
        for i in range(n):
            for a in (0, 1):
                names.append(f"nu{'xy'[a]}{i}")
                lb.append(0.0)
                ub.append(math.inf)
                # +/- v_i,a <= nu_i,a
                m = mats[i][a]
                for sgn in (1.0, -1.0):
                    rows.append(Row((2 * i, 2 * i + 1, base_nu + 2 * i + a),
                                    (sgn * m[0], sgn * m[1], -1.0), 0.0,
                                    f"nu{'xy'[a]}{i}{'+' if sgn > 0 else '-'}"))
        for p, (i, j) in enumerate(pairs):
            for k in KINDS:
                names.append(f"psi_{k}_{i}_{j}")
        for p, (i, j) in enumerate(pairs):
            for k in KINDS:
                for l, ac in enumerate((i, j)):
                    for a in "xy":
                        names.append(f"rho_{k}_{i}_{j}_{ac}{a}")
        extra = len(names) - len(lb)
        lb += [0.0] * extra
        ub += [math.inf] * extra
        diag += [0.0] * (len(names) - len(diag))
        lin += [0.0] * (len(names) - len(lin))

    geoms, boxes = [], []
    groups: dict[tuple[int, int], tuple[Row, ...]] = {}
    protected: dict[tuple[int, int], tuple[ProtectedRow, ...]] = {}
    for p, (i, j) in enumerate(pairs):
        ai, aj = inst.aircraft[i], inst.aircraft[j]
        pg = conflict_region(ai.x0 - aj.x0, ai.y0 - aj.y0, inst.d, i, j)
        geoms.append(pg)
        boxes.append(relative_velocity_box(ai, aj, c))
        didx = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1)
        for z, specs in separation_rows(pg).items():
            grp_rows, prot_rows = [], []
            for kind, a, b in specs:
                ci = a * mats[i][0] + b * mats[i][1]
                cj = -(a * mats[j][0] + b * mats[j][1])
                coef = (float(ci[0]), float(ci[1]), float(cj[0]), float(cj[1]))
                if not robust:
                    grp_rows.append(Row(didx, coef, 0.0, f"{kind}_{i}_{j}"))
                    prot_rows.append(ProtectedRow(kind, p, z, didx, coef))
                    continue
                kk = KINDS.index(kind)
                psi = base_psi + 4 * p + kk
                rho = tuple(base_rho + 16 * p + 4 * kk + 2 * l + ax for l in (0, 1) for ax in (0, 1))
                ex_i, ey_i = u.eps(i)
                ex_j, ey_j = u.eps(j)
                nu = lambda ac, ax: base_nu + 2 * ac + ax  # noqa: E731
                if protection == "standard":
                    dev = ((nu(i, 0), abs(a) * ex_i), (nu(i, 1), abs(b) * ey_i),
                           (nu(j, 0), abs(a) * ex_j), (nu(j, 1), abs(b) * ey_j))
                else:
                    dev = ((nu(i, 0), ex_i), (nu(i, 1), ey_i), (nu(i, 0), ex_i), (nu(i, 1), ey_i))
                grp_rows.append(Row(didx + (psi,) + rho, coef + (u.gamma,) + (1.0,) * 4, 0.0,
                                    f"{kind}_{i}_{j}"))
                for (nu_idx, wgt), r_idx in zip(dev, (rho[0], rho[1], rho[2], rho[3])):
                    # psi + rho >= wgt * nu
                    grp_rows.append(Row((psi, r_idx, nu_idx), (-1.0, -1.0, wgt), 0.0,
                                        f"sup_{names[r_idx][4:]}"))
                prot_rows.append(ProtectedRow(kind, p, z, didx, coef, dev, psi, rho))
            groups[(p, z)] = tuple(grp_rows)
            protected[(p, z)] = tuple(prot_rows)

    return ModelIR(
        kind="robust" if robust else "deterministic",
        instance=inst, control=c, uncertainty=u, vref=vref,
        var_names=tuple(names), lb=np.array(lb, float), ub=np.array(ub, float),
        obj_diag=np.array(diag, float), obj_lin=np.array(lin, float), obj_const=(1 - c.w) * n,
        linear=tuple(rows), groups=groups, protected=protected,
        caps=tuple((i, c.q_hi) for i in range(n)), floors=tuple((i, c.q_lo) for i in range(n)),
        pairs=pairs, geometry=tuple(geoms), boxes=tuple(boxes),
        gamma=u.gamma if robust else 0.0, protection=protection,
    )


# ---------------------------------------------------------------- protection helpers

def budget_vertices(gamma: float, m: int = 4) -> list[tuple[float, ...]]:
    """Maximal vertices of ``{u in [0,1]^m : sum(u) <= gamma}``."""
    if gamma >= m:
        return [(1.0,) * m]
    k = int(math.floor(gamma + 1e-12))
    frac = gamma - k
    out = []
    for s in combinations(range(m), k):
        base = [1.0 if t in s else 0.0 for t in range(m)]
        if frac > 1e-12:
            for e in range(m):
                if e not in s:
                    u = list(base)
                    u[e] = frac
                    out.append(tuple(u))
        else:
            out.append(tuple(base))
    return out


def protection_value(terms: Sequence[float], gamma: float) -> float:
    """Worst-case sum of at most ``gamma`` (fractional) of the non-negative ``terms``."""
    srt = sorted((float(t) for t in terms), reverse=True)
    k = min(int(math.floor(gamma + 1e-12)), len(srt))
    val = math.fsum(srt[:k])
    if k < len(srt):
        val += (gamma - k) * srt[k] if gamma - k > 1e-12 else 0.0
    return val


def protected_row_value(pr: ProtectedRow, x, gamma: float, nu=None) -> float:
    """Left-hand side of the protected row at ``x``; ``nu`` defaults to the entries of ``x``."""
    nom = math.fsum(c * x[i] for i, c in zip(pr.delta_idx, pr.coef))
    if not pr.dev:
        return nom
    src = x if nu is None else nu
    return nom + protection_value([w * abs(src[k]) for k, w in pr.dev], gamma)


# ---------------------------------------------------------------- serialization

def _row_dict(r: Row) -> dict:
    return {"idx": list(r.idx), "coef": list(r.coef), "rhs": r.rhs, "label": r.label}


def _num(v: float):
    return None if not math.isfinite(v) else float(v)


def ir_to_dict(ir: ModelIR) -> dict:
    """JSON-ready description of the model (schema ``deconflict.modelir/1``).

    Rows read ``sum(coef[k] * x[idx[k]]) <= rhs``; infinite bounds are ``null``.
    """
    return {
        "schema": "deconflict.modelir/1",
        "kind": ir.kind,
        "instance": ir.instance.id,
        "gamma": ir.gamma,
        "protection": ir.protection,
        "vref": ir.vref,
        "variables": [{"name": nm, "lb": _num(l), "ub": _num(u)}
                      for nm, l, u in zip(ir.var_names, ir.lb, ir.ub)],
        "binaries": [{"name": f"z_{i}_{j}", "pair": [i, j]} for i, j in ir.pairs],
        "objective": {"diag": ir.obj_diag.tolist(), "linear": ir.obj_lin.tolist(),
                      "constant": ir.obj_const},
        "linear": [_row_dict(r) for r in ir.linear],
        "indicators": [{"pair": list(ir.pairs[p]), "z": z, "rows": [_row_dict(r) for r in rows]}
                       for (p, z), rows in sorted(ir.groups.items())],
        "quadratic_caps": [{"x": 2 * i, "y": 2 * i + 1, "radius": q} for i, q in ir.caps],
        "quadratic_floors": [{"x": 2 * i, "y": 2 * i + 1, "radius": q} for i, q in ir.floors],
        "pair_geometry": [{"i": g.i, "j": g.j, "dx0": g.dx0, "dy0": g.dy0, "gamma_l": g.gamma_l,
                           "phi_l": g.phi_l, "gamma_u": g.gamma_u, "phi_u": g.phi_u}
                          for g in ir.geometry],
        "velocity_boxes": [[b.vx_lo, b.vx_hi, b.vy_lo, b.vy_hi] for b in ir.boxes],
    }


def ir_to_big_m(ir: ModelIR) -> dict:
    """Big-M export: every indicator row gets the pair binary with M from the velocity box.

    A ``z = 1`` row becomes ``row + M*z <= rhs + M``; a ``z = 0`` row ``row - M*z <= rhs``.
    M is the largest value the row can take over the delta box with nu at its reachable
    maximum and psi = rho = 0, which is always attainable when the group is switched off.
    """
    upper = _reachable_upper(ir)
    out = ir_to_dict(ir)
    nvar = ir.n_vars
    big_rows = []
    for (p, z), rows in sorted(ir.groups.items()):
        zcol = nvar + p
        for r in rows:
            m = _row_max(r, ir.lb, upper) - r.rhs
            m = max(m, 0.0)
            if z == 1:
                big_rows.append({"idx": list(r.idx) + [zcol], "coef": list(r.coef) + [m],
                                 "rhs": r.rhs + m, "label": r.label, "M": m})
            else:
                big_rows.append({"idx": list(r.idx) + [zcol], "coef": list(r.coef) + [-m],
                                 "rhs": r.rhs, "label": r.label, "M": m})
    out["big_m_rows"] = big_rows
    out["binary_columns"] = {f"z_{i}_{j}": nvar + p for p, (i, j) in enumerate(ir.pairs)}
    return out


def _reachable_upper(ir: ModelIR) -> np.ndarray:
    ub = ir.ub.copy()
    if ir.kind == "robust":
        for i, a in enumerate(ir.instance.aircraft):
            mx, my = max_abs_components(a, ir.control)
            ub[2 * ir.n + 2 * i] = mx / ir.vref
            ub[2 * ir.n + 2 * i + 1] = my / ir.vref
    return ub


def _row_max(r: Row, lb: np.ndarray, ub: np.ndarray) -> float:
    total = 0.0
    for i, c in zip(r.idx, r.coef):
        if c > 0:
            if name_is_dual(i, lb, ub):
                continue  # psi / rho may sit at zero
            total += c * ub[i]
        elif c < 0:
            total += c * lb[i]
    return total


def name_is_dual(i: int, lb: np.ndarray, ub: np.ndarray) -> bool:
    return lb[i] == 0.0 and not math.isfinite(ub[i])

"""Independent solution audits that work from recovered controls, never from delta.

* ``verify_deterministic`` re-derives velocities from (q, theta) and checks every pair.
* ``verify_robust`` re-checks geometric separation under every budget scenario that the
  protection of the active constraint group has to withstand.
* ``monte_carlo`` samples per-aircraft perturbations from the full box.
* ``grid_oracle`` brute-forces the best conflict-free control combination on a grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations, product
from pathlib import Path
from typing import Sequence

import numpy as np

from .controls import ControlSpec, UncertaintySpec
from .errors import InvalidGamma, NumericalFailure, ResourceCap
from .geometry import EPS_DIV, Instance, RelativeVelocity, assess_pair, conflict_region

DEFAULT_TOL = 1e-6  # NM


@dataclass(frozen=True)
class Violation:
    pair: tuple[int, int]
    scenario: str
    d_min: float


@dataclass(frozen=True)
class VerifyReport:
    worst_pair: tuple[int, int] | None
    worst_margin: float  # min over pairs (and scenarios) of dMin - d, NM
    violations: tuple[Violation, ...]
    passed: bool
    scenarios: int = 1
    tol: float = DEFAULT_TOL

    def to_dict(self) -> dict:
        return {"worst_pair": list(self.worst_pair) if self.worst_pair else None,
                "worst_margin": self.worst_margin, "passed": self.passed,
                "scenarios": self.scenarios, "tol": self.tol,
                "violations": [{"pair": list(v.pair), "scenario": v.scenario, "d_min": v.d_min}
                               for v in self.violations]}


@dataclass(frozen=True)
class OracleResult:
    best_objective: float
    best_controls: tuple[tuple[float, float], ...] | None
    grid_resolution: tuple[int, int]
    evaluated: int
    objective: str = "model1"


def _controls(sol) -> Sequence[tuple[float, float]]:
    ctrls = getattr(sol, "controls", sol)
    return [(float(q), float(t)) for q, t in ctrls]


def _velocities(inst: Instance, controls) -> np.ndarray:
    return np.array([a.velocity(q, t) for a, (q, t) in zip(inst.aircraft, controls)])


def _report(margins: dict, viols: list, tol: float, scenarios: int) -> VerifyReport:
    if margins:
        wp = min(margins, key=lambda k: (margins[k], k))
        wm = margins[wp]
    else:
        wp, wm = None, math.inf
    return VerifyReport(wp, wm, tuple(viols), wm >= -tol, scenarios, tol)


def verify_deterministic(inst: Instance, sol, tol: float = DEFAULT_TOL) -> VerifyReport:
    """Nominal separation audit; ``sol`` is a Solution or a list of (q, theta)."""
    ctrls = _controls(sol)
    if len(ctrls) != inst.n:
        raise ValueError(f"need controls for {inst.n} aircraft, got {len(ctrls)}")
    v = _velocities(inst, ctrls)
    margins, viols = {}, []
    for i, j in inst.pairs:
        a, b = inst.aircraft[i], inst.aircraft[j]
        rel = RelativeVelocity(v[i, 0] - v[j, 0], v[i, 1] - v[j, 1])
        pa = assess_pair(a.x0 - b.x0, a.y0 - b.y0, rel, inst.d, (i, j))
        margins[(i, j)] = pa.d_min - inst.d
        if pa.d_min < inst.d - tol:
            viols.append(Violation((i, j), "nominal", pa.d_min))
    return _report(margins, viols, tol, 1)


_SIGNS = [np.array(s, float) for s in product((1.0, -1.0), repeat=4)]


def budget_scenarios(gamma: float, m: int = 4) -> list[tuple[float, ...]]:
    """Magnitude patterns: ``floor(gamma)`` full deviations plus one fractional extra."""
    if not (0.0 <= gamma <= m):
        raise InvalidGamma(f"gamma must lie in [0, {m}], got {gamma}")
    k = int(math.floor(gamma + 1e-12))
    frac = gamma - k
    out = set()
    for s in combinations(range(m), k):
        base = [1.0 if t in s else 0.0 for t in range(m)]
        if frac > 1e-12 and k < m:
            for e in range(m):
                if e not in s:
                    u = list(base)
                    u[e] = frac
                    out.add(tuple(u))
        else:
            out.add(tuple(base))
    return sorted(out)


def _deepest_in_wedge(lo: np.ndarray, up: np.ndarray) -> tuple[float, int, int, float]:
    """Largest ``t`` with ``lo >= t`` and ``-up >= t`` over the convex hull of the points.

    ``lo``/``up`` are the two wedge functionals at each point; the hull meets the open
    wedge iff the result is positive. An optimal hull point mixes at most two points,
    so it is ``mu * p[k] + (1 - mu) * p[l]``; returns ``(t, k, l, mu)``.
    """
    single = np.minimum(lo, -up)
    k = int(np.argmax(single))
    best = (float(single[k]), k, k, 1.0)
    s = lo + up  # lo - (-up); the two sides cross where the mixed value is zero
    den = s[:, None] - s[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(np.abs(den) > 1e-300, -s[None, :] / den, -1.0)
    ok = (mu > 0) & (mu < 1)
    if ok.any():
        val = mu * lo[:, None] + (1 - mu) * lo[None, :]
        val = np.where(ok, val, -np.inf)
        kk, ll = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[kk, ll] > best[0]:
            best = (float(val[kk, ll]), int(kk), int(ll), float(mu[kk, ll]))
    return best


def verify_robust(inst: Instance, sol, u: UncertaintySpec, tol: float = DEFAULT_TOL) -> VerifyReport:
    """Worst-case audit under the budget ``u.gamma``.

    Deviations ``(eps_ix, eps_iy, eps_jx, eps_jy)`` scale the velocity components as
    ``v(1 + eps)``, so each pair's relative velocity is affine in them and the budgeted
    set maps onto the convex hull of its vertex images (each budget pattern under all 16
    sign choices; 16 vertices when gamma = 4). Every vertex is re-assessed
    geometrically. The conflict wedge is convex but its complement is not, so the hull
    is also tested against the wedge; when they meet, the deepest hull point is a
    further in-budget scenario.
    """
    if not (0.0 <= u.gamma <= 4.0):
        raise InvalidGamma(f"gamma must lie in [0, 4], got {u.gamma}")
    ctrls = _controls(sol)
    v = _velocities(inst, ctrls)
    patterns = budget_scenarios(u.gamma)
    margins, viols = {}, []
    n_scen = 0
    for p, (i, j) in enumerate(inst.pairs):
        a, b = inst.aircraft[i], inst.aircraft[j]
        dx0, dy0 = a.x0 - b.x0, a.y0 - b.y0
        ei, ej = u.eps(i), u.eps(j)
        bounds = np.array([ei[0], ei[1], ej[0], ej[1]])
        scen = {(0.0, 0.0, 0.0, 0.0): "nominal"}
        for sign in _SIGNS:
            for pat in patterns:
                eps = tuple(float(x) + 0.0 for x in np.array(pat) * bounds * sign)
                scen.setdefault(eps, "".join("+" if s > 0 else "-" for s in sign) + ":"
                                + ",".join(f"{x:g}" for x in pat))
        labels = list(scen.values())
        eps = np.array(list(scen.keys()))
        rel = np.column_stack([v[i, 0] * (1 + eps[:, 0]) - v[j, 0] * (1 + eps[:, 2]),
                               v[i, 1] * (1 + eps[:, 1]) - v[j, 1] * (1 + eps[:, 3])])
        pg = conflict_region(dx0, dy0, inst.d, i, j)
        t, k, l, mu = _deepest_in_wedge(pg.lower_value(rel[:, 0], rel[:, 1]),
                                        pg.upper_value(rel[:, 0], rel[:, 1]))
        if t > 0 and k != l:
            rel = np.vstack([rel, mu * rel[k] + (1 - mu) * rel[l]])
            labels.append(f"hull:{mu:.6g}*[{labels[k]}]+{1 - mu:.6g}*[{labels[l]}]")
        worst = math.inf
        for (rx, ry), label in zip(rel, labels):
            dm = assess_pair(dx0, dy0, RelativeVelocity(float(rx), float(ry)), inst.d, (i, j)).d_min
            worst = min(worst, dm - inst.d)
            if dm < inst.d - tol:
                viols.append(Violation((i, j), label, dm))
        n_scen += len(labels)
        margins[(i, j)] = worst
    return _report(margins, viols, tol, n_scen)


# ---------------------------------------------------------------- Monte Carlo

def _pair_dmin(px, py, vx, vy) -> np.ndarray:
    """Vectorised closest-approach distance over t >= 0."""
    nv = vx * vx + vy * vy
    safe = np.where(nv < EPS_DIV, 1.0, nv)
    t = -(px * vx + py * vy) / safe
    t = np.where((nv < EPS_DIV) | (t <= 0), 0.0, t)
    return np.hypot(px + vx * t, py + vy * t)


@dataclass(frozen=True)
class MonteCarloReport:
    seed: int
    samples: int
    violations: int
    rate: float
    worst_margin: float


def monte_carlo(inst: Instance, sol, eps: UncertaintySpec | float, samples: int = 10_000,
                seed: int = 0, tol: float = DEFAULT_TOL) -> MonteCarloReport:
    """Fraction of uniform draws from the full perturbation box with any pair below d - tol."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not isinstance(eps, UncertaintySpec):
        eps = UncertaintySpec.uniform(float(eps), 4.0)
    v = _velocities(inst, _controls(sol))
    n = inst.n
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    bound = np.array([eps.eps(i) for i in range(n)])          # (n, 2)
    draw = rng.uniform(-1.0, 1.0, size=(samples, n, 2)) * bound
    vp = v[None, :, :] * (1.0 + draw)                          # (samples, n, 2)
    worst = np.full(samples, np.inf)
    for i, j in inst.pairs:
        a, b = inst.aircraft[i], inst.aircraft[j]
        rel = vp[:, i, :] - vp[:, j, :]
        dm = _pair_dmin(a.x0 - b.x0, a.y0 - b.y0, rel[:, 0], rel[:, 1])
        worst = np.minimum(worst, dm - inst.d)
    bad = int(np.count_nonzero(worst < -tol))
    return MonteCarloReport(int(seed), int(samples), bad, bad / samples, float(worst.min()))


def write_monte_carlo_csv(path: str | Path, reports: Sequence[MonteCarloReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "samples", "rate"])
        for r in reports:
            w.writerow([r.seed, r.samples, repr(r.rate)])
    return path


# ---------------------------------------------------------------- grid oracle

def control_grid(lo: float, hi: float, nominal: float, points: int) -> np.ndarray:
    """Odd-sized grid with the nominal value exactly in the middle, halves evenly spaced."""
    if points < 3 or points % 2 == 0:
        raise ValueError("grid sizes must be odd and >= 3")
    m = points // 2
    left = np.linspace(lo, nominal, m + 1)
    right = np.linspace(nominal, hi, m + 1)[1:]
    return np.concatenate([left, right])


def grid_oracle(inst: Instance, c: ControlSpec, grid_q: int = 21, grid_theta: int = 21,
                objective: str = "model1", max_product: float = 1e10,
                tol: float = DEFAULT_TOL) -> OracleResult:
    """Best conflict-free control combination over a per-aircraft (q, theta) grid.

    Pairwise feasibility is tabulated once per pair; the search then visits aircraft in
    order, each aircraft's grid sorted by cost, and prunes on the incumbent value.
    """
    if objective not in ("model1", "surrogate"):
        raise ValueError(f"unknown objective {objective!r}")
    qs = control_grid(c.q_lo, c.q_hi, 1.0, grid_q)
    ts = control_grid(c.th_lo, c.th_hi, 0.0, grid_theta)
    Q, T = np.meshgrid(qs, ts, indexing="ij")
    Q, T = Q.ravel(), T.ravel()
    K = len(Q)
    if float(K) ** inst.n > max_product:
        raise ResourceCap(f"grid product {K}^{inst.n} exceeds budget {max_product:g}")
    if objective == "model1":
        cost = (1 - c.w) * (1 - Q) ** 2 + c.w * T ** 2
    else:
        cost = (1 - c.w) * (1 - Q * np.cos(T)) ** 2 + c.w * (Q * np.sin(T)) ** 2
    order = np.argsort(cost, kind="stable")
    vel = []
    for a in inst.aircraft:
        s = a.speed * Q
        vel.append((s * np.cos(a.heading + T), s * np.sin(a.heading + T)))
    feas = {}
    for i, j in inst.pairs:
        a, b = inst.aircraft[i], inst.aircraft[j]
        vx = vel[i][0][:, None] - vel[j][0][None, :]
        vy = vel[i][1][:, None] - vel[j][1][None, :]
        feas[(i, j)] = _pair_dmin(a.x0 - b.x0, a.y0 - b.y0, vx, vy) >= inst.d - tol
    n = inst.n
    cmin = float(cost.min())
    best = [math.inf, None]
    evaluated = 0

    def dfs(k: int, chosen: list[int], acc: float):
        nonlocal evaluated
        allowed = np.ones(K, dtype=bool)
        for i, idx in enumerate(chosen):
            allowed &= feas[(i, k)][idx]
        rest = (n - k - 1) * cmin
        for idx in order:
            cst = acc + cost[idx]
            if cst + rest >= best[0]:
                break
            if not allowed[idx]:
                continue
            if k == n - 1:
                evaluated += 1
                best[0], best[1] = cst, chosen + [int(idx)]
                break
            evaluated += 1
            dfs(k + 1, chosen + [int(idx)], cst)

    dfs(0, [], 0.0)
    ctrls = None
    if best[1] is not None:
        ctrls = tuple((float(Q[k]), float(T[k])) for k in best[1])
        if not verify_deterministic(inst, ctrls, tol).passed:
            raise NumericalFailure("grid oracle incumbent failed the deterministic audit")
    return OracleResult(float(best[0]), ctrls, (grid_q, grid_theta), evaluated, objective)

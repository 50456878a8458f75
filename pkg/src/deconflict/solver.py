"""Branch-and-bound on the pair binaries with QP node relaxations and cut generation.

A node fixes some pair binaries; its QP contains the delta boxes, heading cones, the
indicator groups of the fixed pairs only, a few seed cap tangents and the cap and floor
cuts collected on the path to the node. Unfixed pairs are dropped, so the QP relaxes the pair disjunctions.

Norm floors ``|delta_i| >= q_lo`` are reverse-convex. In the default mode a violated
floor gets the tangent cut ``u . delta_i >= q_lo`` (``u`` the unit direction of the
relaxation point), which is a restriction: points it keeps satisfy the floor, but it can
also drop feasible points far from ``u``. ``certify=True`` instead carries a heading
interval per aircraft and relaxes the annulus sector by its chord, branching on the
interval while the chord relaxation still violates a floor; tangent cuts are then only
used to polish incumbents. Bounds in certify mode are valid lower bounds.

Robust groups are handled in a projected form by default: with ``nu`` bounding the
absolute velocity components, each protected row becomes one linear row per maximal
vertex of the budget polytope. ``robust_form="dual"`` uses the model's explicit
``psi``/``rho`` rows instead.
"""
from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericalFailure, ShapeMismatch
from .geometry import assess_pair, relative_state
from .model import (ModelIR, budget_vertices, max_abs_components, protection_value,
                    recover_controls, surrogate_objective)
from .qp import QPSubproblem, certificate_margin, certify_infeasible, qp_solve

SEP_MARGIN = 1e-9     # back-off on separation rows, in units of vref
FEAS_TOL = 1e-8       # pair and norm checks on candidate incumbents
CAP_TOL = 1e-10       # cap check on incumbents
CAP_TOL_RELAX = 1e-7  # looser cap check inside relaxations (still a relaxation)
FLOOR_TOL = 1e-10
DROP_MARGIN = 1e-7    # a group counts as always satisfied below -DROP_MARGIN
OWN_GLOBAL, OWN_FLOOR, OWN_INTERVAL = -1, -2, -3  # row owners besides pair indices
ROTATE_TOL = 1e-4     # sine of the angle a floor tangent may lag its point (objective error ~1e-8)


@dataclass(frozen=True)
class SolveParams:
    rel_gap: float = 0.01
    time_limit: float = 600.0
    cut_tol: float = 1e-6
    max_cut_rounds: int = 200      # floor-cut re-solves per node
    node_limit: int = 2_000_000
    certify: bool = False
    seed: int = 0
    robust_form: str = "projected"  # or "dual"
    dive: bool = True
    dive_every: int = 50           # re-dive period (nodes) while no incumbent exists

    def __post_init__(self):
        if self.rel_gap < 0:
            raise ValueError("rel_gap must be >= 0")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.robust_form not in ("projected", "dual"):
            raise ValueError(f"unknown robust_form {self.robust_form!r}")


@dataclass(frozen=True)
class Solution:
    status: str  # Optimal | Feasible | Infeasible | TimeOut
    deltas: tuple[tuple[float, float], ...] = ()
    controls: tuple[tuple[float, float], ...] = ()    # (q, theta) per aircraft
    velocities: tuple[tuple[float, float], ...] = ()  # NM/h
    z: tuple[int, ...] = ()
    surrogate: float = math.inf
    model1: float = math.inf

    @property
    def has_point(self) -> bool:
        return len(self.deltas) > 0


@dataclass(frozen=True)
class SolveReport:
    ub: float
    lb: float
    gap: float
    time_sec: float
    n_cut_rounds: int
    nodes: int
    status: str
    qp_solves: int = 0
    certify: bool = False
    nogoods: int = 0


@dataclass(frozen=True)
class Cut:
    """``coef . delta_i <= rhs`` on one aircraft."""

    aircraft: int
    coef: tuple[float, float]
    rhs: float
    degenerate: bool = False


def cap_cut(delta: tuple[float, float], q_hi: float, aircraft: int = 0) -> Cut:
    """Gradient cut ``2 d* . d <= |d*|^2 + q_hi^2`` of the convex cap at ``d*``."""
    dx, dy = delta
    return Cut(aircraft, (2.0 * dx, 2.0 * dy), dx * dx + dy * dy + q_hi * q_hi)


def floor_cut(delta: tuple[float, float], q_lo: float, th_abs_max: float = math.pi / 6,
              aircraft: int = 0) -> Cut:
    """Tangent cut ``(d*/|d*|) . d >= q_lo``; at the origin falls back to ``dx >= q_lo cos(th)``."""
    r = math.hypot(*delta)
    if r < 1e-12:
        return Cut(aircraft, (-1.0, 0.0), -q_lo * math.cos(th_abs_max), degenerate=True)
    return Cut(aircraft, (-delta[0] / r, -delta[1] / r), -q_lo)


# ---------------------------------------------------------------- node data

@dataclass
class _Node:
    lb: float
    fixed: tuple[int, ...]                  # -1 unfixed, else z
    cuts: tuple[tuple[int, float, float, float], ...] = ()  # (aircraft, ax, ay, rhs): a . d <= rhs
    intervals: tuple[tuple[float, float], ...] | None = None
    depth: int = 0
    hint: np.ndarray | None = None
    nid: int = 0
    parent: int | None = None
    lit: tuple[int, int] | None = None      # branching literal (pair, z); None for spatial children
    reasons: tuple = ()                     # (pair, nogood) for sides fixed by propagation, in order


@dataclass(frozen=True)
class _Infeasible:
    nogood: frozenset | None


@dataclass
class _Group:
    A: np.ndarray
    b: np.ndarray


class _Engine:
    def __init__(self, ir: ModelIR, params: SolveParams):
        self.ir = ir
        self.p = params
        self.n = ir.n
        self.c = ir.control
        n = self.n
        self.robust = ir.kind == "robust"
        self.dual = self.robust and params.robust_form == "dual"
        dev_active = self.robust and ir.gamma > 0 and any(
            w > 0 for prs in ir.protected.values() for pr in prs for _, w in pr.dev)
        self.use_nu = dev_active or self.dual
        if self.dual:
            self.nx = ir.n_vars
        else:
            self.nx = 4 * n if self.use_nu else 2 * n
        nx = self.nx
        self.h = ir.obj_diag[:nx].copy()
        self.lin = ir.obj_lin[:nx].copy()
        self.const = ir.obj_const
        self.lb = ir.lb[:nx].copy()
        self.ub = ir.ub[:nx].copy()
        self.nu_bar = np.zeros(2 * n)
        for i, a in enumerate(ir.instance.aircraft):
            mx, my = max_abs_components(a, self.c)
            self.nu_bar[2 * i] = mx / ir.vref
            self.nu_bar[2 * i + 1] = my / ir.vref
        if self.use_nu:
            self.ub[2 * n:4 * n] = self.nu_bar
        if self.dual:
            # psi and rho never need to exceed the largest deviation term they support
            wmax = max((w for prs in ir.protected.values() for pr in prs for _, w in pr.dev), default=0.0)
            self.ub[4 * n:] = wmax * float(self.nu_bar.max()) + 1e-9

        base = [r for r in ir.linear if self.use_nu or max(r.idx) < 2 * n]
        self.A0, self.b0 = self._dense(base)
        # chord of each full annulus sector: the floor's convex hull, valid everywhere
        chord = self._interval_rows([(self.c.th_lo, self.c.th_hi)] * n, full=True)
        self.A0 = np.vstack([self.A0, chord[0][2::3]])
        self.b0 = np.concatenate([self.b0, chord[1][2::3]])
        self.groups: dict[tuple[int, int], _Group] = {}
        evals, starts = [], []
        for p in range(len(ir.pairs)):
            for z in (1, 0):
                key = (p, z)
                prs = ir.protected[key]
                E, _ = self._projected(prs, 4 * n)
                starts.append(sum(len(e) for e in evals))
                evals.append(E)
                if self.dual:
                    A, b = self._dense(ir.groups[key])
                    b = b - self._sep_margin_mask(ir.groups[key])
                else:
                    A, b = self._projected(prs, self.nx)
                self.groups[key] = _Group(A, b)
        # rows over [delta, |v|] whose max per group is the protected group violation
        self.E = np.vstack(evals)
        self.E_starts = np.array(starts)
        self.cap_A = np.zeros((64, self.nx))
        self.cap_b = np.zeros(64)
        self.n_caps = 0
        for i in range(n):
            for ang in np.linspace(self.c.th_lo, self.c.th_hi, 5):
                u = (self.c.q_hi * math.cos(ang), self.c.q_hi * math.sin(ang))
                self.add_cap(cap_cut(u, self.c.q_hi, i))
        self.qp_solves = 0
        self.cut_rounds = 0

    def cap_at(self, d, i: int) -> "Cut":
        """Supporting tangent at the radial projection of ``d`` onto the cap circle."""
        r = math.hypot(d[0], d[1])
        return cap_cut((self.c.q_hi * d[0] / r, self.c.q_hi * d[1] / r), self.c.q_hi, i)

    def add_cap(self, ct: "Cut"):
        k = self.n_caps
        if k == len(self.cap_A):
            self.cap_A = np.vstack([self.cap_A, np.zeros_like(self.cap_A)])
            self.cap_b = np.concatenate([self.cap_b, np.zeros_like(self.cap_b)])
        self.cap_A[k, 2 * ct.aircraft], self.cap_A[k, 2 * ct.aircraft + 1] = ct.coef
        self.cap_b[k] = ct.rhs
        self.n_caps += 1

    def caps(self) -> tuple[np.ndarray, np.ndarray]:
        return self.cap_A[:self.n_caps], self.cap_b[:self.n_caps]

    # ---------------------------------------------------------------- assembly

    def _dense(self, rows) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros((len(rows), self.nx))
        b = np.zeros(len(rows))
        for k, r in enumerate(rows):
            for i, cf in zip(r.idx, r.coef):
                A[k, i] += cf
            b[k] = r.rhs
        return A, b

    def _sep_margin_mask(self, rows) -> np.ndarray:
        return np.array([SEP_MARGIN if not r.label.startswith("sup_") else 0.0 for r in rows])

    def _projected(self, prs, width: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        verts = budget_vertices(self.ir.gamma) if self.use_nu else [()]
        for pr in prs:
            seen = set()
            for u in verts:
                row = np.zeros(width)
                for k, cf in zip(pr.delta_idx, pr.coef):
                    row[k] += cf
                for ul, (nu_idx, w) in zip(u, pr.dev):
                    if ul * w > 0:
                        row[nu_idx] += ul * w
                key = tuple(np.round(row, 15))
                if key in seen:
                    continue
                seen.add(key)
                out.append(row)
        A = np.array(out).reshape(-1, width)
        return A, np.full(len(out), -SEP_MARGIN)

    def _interval_rows(self, intervals, full: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Cone rows and chord per aircraft; full-range intervals are skipped unless ``full``."""
        rows, rhs = [], []
        for i, (a, b) in enumerate(intervals):
            if not full and a <= self.c.th_lo and b >= self.c.th_hi:
                continue
            r1 = np.zeros(self.nx)
            r1[2 * i], r1[2 * i + 1] = -math.tan(b), 1.0       # dy <= dx tan(b)
            r2 = np.zeros(self.nx)
            r2[2 * i], r2[2 * i + 1] = math.tan(a), -1.0       # dy >= dx tan(a)
            mid, hw = 0.5 * (a + b), 0.5 * (b - a)
            r3 = np.zeros(self.nx)
            r3[2 * i], r3[2 * i + 1] = -math.cos(mid), -math.sin(mid)
            rows += [r1, r2, r3]
            rhs += [0.0, 0.0, -self.c.q_lo * math.cos(hw)]
        return np.array(rows).reshape(-1, self.nx), np.array(rhs)

    def build_qp(self, fixed, cuts, intervals, extra_fixed=None) -> QPSubproblem:
        """Node QP; ``self.owner`` labels its rows (pair index, OWN_GLOBAL, OWN_FLOOR, OWN_INTERVAL)."""
        As, bs = [self.A0], [self.b0]
        own = [np.full(len(self.b0), OWN_GLOBAL)]
        zs = fixed if extra_fixed is None else extra_fixed
        for p, z in enumerate(zs):
            if z >= 0:
                g = self.groups[(p, z)]
                As.append(g.A)
                bs.append(g.b)
                own.append(np.full(len(g.b), p))
        A, b = self.caps()
        As.append(A)
        bs.append(b)
        own.append(np.full(len(b), OWN_GLOBAL))
        if cuts:
            A = np.zeros((len(cuts), self.nx))
            b = np.zeros(len(cuts))
            for k, (i, ax, ay, rhs) in enumerate(cuts):
                A[k, 2 * i], A[k, 2 * i + 1], b[k] = ax, ay, rhs
            As.append(A)
            bs.append(b)
            # cap tangents (positive rhs) are valid everywhere, floor tangents are not
            own.append(np.where(b > 0, OWN_GLOBAL, OWN_FLOOR))
        if intervals is not None:
            A, b = self._interval_rows(intervals)
            As.append(A)
            bs.append(b)
            own.append(np.full(len(b), OWN_INTERVAL))
        self.owner = np.concatenate(own).astype(int)
        return QPSubproblem(self.h, self.lin, np.vstack(As), np.concatenate(bs), self.lb, self.ub)

    def nogood(self, qp: QPSubproblem, y, fixed) -> frozenset | None:
        """Pair sides whose groups, with the global rows, are jointly infeasible.

        Read off the support of the certificate ``y``. When the support touches floor
        tangents or heading-interval rows, a phase-one LP without those rows is tried.
        """
        own = self.owner
        if y is not None:
            ng = self._support_nogood(qp, np.asarray(y, float), own, fixed)
            if ng is not None:
                return ng
        keep = own >= OWN_GLOBAL
        if keep.all():
            return None
        sub = QPSubproblem(qp.h, qp.c, qp.A[keep], qp.b[keep], qp.lb, qp.ub)
        res = certify_infeasible(sub)
        if res is None:
            return None
        return self._support_nogood(sub, res.certificate, own[keep], fixed)

    def _support_nogood(self, qp, y, own, fixed) -> frozenset | None:
        y = np.where(own >= OWN_GLOBAL, y, 0.0)
        if not np.any(y > 0) or certificate_margin(qp, y) <= 0:
            return None
        pairs = np.unique(own[(y > 0) & (own >= 0)])
        return frozenset((int(p), int(fixed[p])) for p in pairs)

    # ---------------------------------------------------------------- evaluation

    def deltas(self, x) -> np.ndarray:
        return x[:2 * self.n].reshape(self.n, 2)

    def abs_velocity(self, x) -> np.ndarray:
        """|v| per aircraft component in units of vref."""
        out = np.zeros(2 * self.n)
        d = self.deltas(x)
        for i, a in enumerate(self.ir.instance.aircraft):
            cth, sth = math.cos(a.heading), math.sin(a.heading)
            s = a.speed / self.ir.vref
            out[2 * i] = abs(s * (cth * d[i, 0] - sth * d[i, 1]))
            out[2 * i + 1] = abs(s * (sth * d[i, 0] + cth * d[i, 1]))
        return out

    def group_violations(self, x) -> np.ndarray:
        """Protected violation of every group at ``x`` with nu = |v|; shape (pairs, 2) for z = 1, 0."""
        y = np.concatenate([x[:2 * self.n], self.abs_velocity(x)])
        vals = np.maximum.reduceat(self.E @ y, self.E_starts)
        return vals.reshape(-1, 2)

    def pair_depths(self, x, fixed) -> dict[int, tuple[float, int]]:
        """For each unfixed pair: (min over z of group violation, better z)."""
        gv = self.group_violations(x)
        out = {}
        for p, z in enumerate(fixed):
            if z < 0:
                v1, v0 = gv[p]
                out[p] = (float(min(v1, v0)), 1 if v1 <= v0 else 0)
        return out

    def solve_qp(self, qp, hint=None):
        self.qp_solves += 1
        return qp_solve(qp)

    # ---------------------------------------------------------------- node relaxation

    def _cut(self, ct: Cut) -> tuple[int, float, float, float]:
        return (ct.aircraft, ct.coef[0], ct.coef[1], ct.rhs)

    def _norm_cuts(self, x, cuts: list, cap_tol: float, floors: bool) -> str:
        """Update the local cut list at ``x``; return 'cap', 'floor' or '' when clean.

        Cap tangents are appended. A floor tangent is kept per aircraft: it is added when
        the floor is violated and, while active, rotated to the direction of the new point
        (the rotated tangent still keeps ``x`` feasible, so the objective only improves).
        """
        d = self.deltas(x)
        norms = np.hypot(d[:, 0], d[:, 1])
        over = np.nonzero(norms > self.c.q_hi + cap_tol)[0]
        if len(over):
            cuts.extend(self._cut(self.cap_at(d[i], int(i))) for i in over)
            return "cap"
        if not floors:
            return ""
        changed = False
        have = {}
        for k, ct in enumerate(cuts):
            if ct[3] == -self.c.q_lo:
                have[ct[0]] = k
        for i in range(self.n):
            r = norms[i]
            if i in have:
                k = have[i]
                ax, ay = cuts[k][1], cuts[k][2]
                active = -(ax * d[i, 0] + ay * d[i, 1]) - self.c.q_lo <= 1e-9
                if active and abs(ax * d[i, 1] - ay * d[i, 0]) > ROTATE_TOL * r:
                    cuts[k] = self._cut(floor_cut(tuple(d[i]), self.c.q_lo, self.c.th_abs_max, i))
                    changed = True
            elif r < self.c.q_lo - FLOOR_TOL:
                cuts.append(self._cut(floor_cut(tuple(d[i]), self.c.q_lo, self.c.th_abs_max, i)))
                changed = True
        return "floor" if changed else ""

    def relax(self, node: _Node, ub: float):
        """Solve the node QP, adding cap cuts and (default mode) floor cuts until clean.

        Returns ``(x, obj, cuts)``, ``_Infeasible`` (with a nogood when one is available),
        ``None`` when the node is dominated, or ``"cutlimit"`` / ``"numerics"`` when it
        could not be resolved.
        """
        cuts = list(node.cuts)
        rounds = 0
        while True:
            qp = self.build_qp(node.fixed, cuts, node.intervals)
            try:
                res = self.solve_qp(qp)
            except NumericalFailure:
                return "numerics"
            if res.status == "Infeasible":
                return _Infeasible(self.nogood(qp, res.certificate, node.fixed))
            if res.status != "Optimal":
                return None
            x = res.x
            obj = res.obj + self.const
            if obj >= ub:
                return None
            kind = self._norm_cuts(x, cuts, CAP_TOL_RELAX, not self.p.certify)
            if kind == "floor":
                rounds += 1
                self.cut_rounds += 1
                if rounds > self.p.max_cut_rounds:
                    return "cutlimit"
            if kind:
                continue
            return x, obj, tuple(cuts)

    def polish(self, zfull, cuts, intervals, x_start):
        """Feasible point for a complete z assignment: fix all groups, then tangent cuts."""
        cuts = list(cuts)
        self._norm_cuts(x_start, cuts, math.inf, True)
        for _ in range(self.p.max_cut_rounds + 1):
            qp = self.build_qp(zfull, cuts, intervals)
            try:
                res = self.solve_qp(qp)
            except NumericalFailure:
                return None
            if res.status != "Optimal":
                return None
            kind = self._norm_cuts(res.x, cuts, CAP_TOL, True)
            if kind == "floor":
                self.cut_rounds += 1
            if kind:
                continue
            return res.x, res.obj + self.const
        return None

    def certify_point(self, x, z) -> bool:
        """Independent check of a candidate: norms, cones and every active group."""
        d = self.deltas(x)
        for dx, dy in d:
            r = math.hypot(dx, dy)
            if not (self.c.q_lo - FEAS_TOL <= r <= self.c.q_hi + FEAS_TOL) or dx <= 0:
                return False
            th = math.atan2(dy, dx)
            if not (self.c.th_lo - FEAS_TOL <= th <= self.c.th_hi + FEAS_TOL):
                return False
        gv = self.group_violations(x)
        return all(gv[p, 1 - zp] <= FEAS_TOL for p, zp in enumerate(z))


# ---------------------------------------------------------------- preprocessing

def _sector_max(cx: float, cy: float, q_lo: float, q_hi: float, a: float, b: float) -> float:
    """Max of ``c . d`` over the annulus sector ``q_lo <= |d| <= q_hi``, angle in [a, b]."""
    ang = math.atan2(cy, cx)
    if a <= ang <= b:
        best = math.hypot(cx, cy)
    else:
        best = max(cx * math.cos(a) + cy * math.sin(a), cx * math.cos(b) + cy * math.sin(b))
    return best * (q_hi if best > 0 else q_lo)


def _presolve(eng: _Engine) -> tuple[list[int], list[int]]:
    """Fixed z (or -1) per pair and the pairs whose groups never need enforcing.

    A group that is impossible on the true control set removes its side; a group that
    holds everywhere makes the pair free.
    """
    c = eng.c
    n_pairs = len(eng.ir.pairs)
    fixed = [-1] * n_pairs
    free = []
    for p, (i, j) in enumerate(eng.ir.pairs):
        always, never = {}, {}
        for z in (0, 1):
            hi_total, lo_any = -math.inf, -math.inf
            for pr in eng.ir.protected[(p, z)]:
                coef, dev = pr.coef, pr.dev
                mx = (_sector_max(coef[0], coef[1], c.q_lo, c.q_hi, c.th_lo, c.th_hi)
                      + _sector_max(coef[2], coef[3], c.q_lo, c.q_hi, c.th_lo, c.th_hi))
                mn = -(_sector_max(-coef[0], -coef[1], c.q_lo, c.q_hi, c.th_lo, c.th_hi)
                       + _sector_max(-coef[2], -coef[3], c.q_lo, c.q_hi, c.th_lo, c.th_hi))
                if dev:
                    mx += protection_value([w * eng.nu_bar[k - 2 * eng.n] for k, w in dev], eng.ir.gamma)
                hi_total = max(hi_total, mx)
                lo_any = max(lo_any, mn)
            always[z] = hi_total <= -DROP_MARGIN
            never[z] = lo_any > DROP_MARGIN
        if always[1] or always[0]:
            free.append(p)
            fixed[p] = -2  # never branched, never enforced
        elif never[1] and not never[0]:
            fixed[p] = 0
        elif never[0] and not never[1]:
            fixed[p] = 1
    return fixed, free


# ---------------------------------------------------------------- conflict learning

class _Nogoods:
    """Learned sets of pair sides that cannot hold together.

    Literal ``(p, z)`` is stored at column ``2p + z``. ``scan`` reports a nogood fully
    contained in an assignment, or the sides forced by nogoods missing one literal.
    """

    def __init__(self, n_pairs: int):
        self.n_cols = 2 * n_pairs
        self.sets: list[frozenset] = []
        self.known: set[frozenset] = set()
        self._rows: list[np.ndarray] = []
        self._M = None
        self._sizes = np.zeros(0)

    def __len__(self) -> int:
        return len(self.sets)

    def add(self, ng: frozenset) -> None:
        if ng in self.known:
            return
        self.known.add(ng)
        self.sets.append(ng)
        self._rows.append(np.array(sorted(2 * p + z for p, z in ng), dtype=np.int64))
        self._M = None

    def _matrix(self):
        if self._M is None:
            from scipy import sparse
            indptr = np.concatenate([[0], np.cumsum([len(r) for r in self._rows])])
            idx = np.concatenate(self._rows) if self._rows else np.zeros(0, np.int64)
            self._M = sparse.csr_matrix((np.ones(len(idx)), idx, indptr),
                                        shape=(len(self._rows), self.n_cols))
            self._sizes = np.diff(indptr)
        return self._M

    def scan(self, fixed) -> tuple[frozenset | None, list[tuple[int, int, frozenset]]]:
        if not self.sets:
            return None, []
        f = np.zeros(self.n_cols)
        fx = np.asarray(fixed)
        on = np.nonzero(fx >= 0)[0]
        f[2 * on + fx[on]] = 1.0
        hits = self._matrix() @ f
        full = np.nonzero(hits >= self._sizes)[0]
        if len(full):
            return self.sets[int(full[0])], []
        forced = []
        for k in np.nonzero(hits == self._sizes - 1)[0]:
            ng = self.sets[int(k)]
            for p, z in ng:
                if fx[p] == -1:
                    forced.append((p, 1 - z, ng))
                    break
        return None, forced


def _expand(ng: frozenset, reasons) -> frozenset:
    """Resolve away sides that propagation fixed, newest first."""
    out = set(ng)
    for q, why in reversed(reasons):
        z = next((zz for (pp, zz) in out if pp == q), None)
        if z is not None:
            out.discard((q, z))
            out |= {lit for lit in why if lit[0] != q}
    return frozenset(out)


# ---------------------------------------------------------------- main loop

def solve(ir: ModelIR, params: SolveParams | None = None,
          warm: Solution | None = None) -> tuple[Solution, SolveReport]:
    params = params or SolveParams()
    t0 = time.perf_counter()
    eng = _Engine(ir, params)
    n_pairs = len(ir.pairs)
    pre, free = _presolve(eng)
    # pairs marked -2 are handled as fixed-without-rows: use a separate mask
    root_fixed = tuple(z if z >= 0 else -1 for z in pre)
    skip = np.array([z == -2 for z in pre])

    def depths_of(x, fixed):
        dd = eng.pair_depths(x, fixed)
        return {p: v for p, v in dd.items() if not skip[p]}

    ub = math.inf
    best_x = None
    best_z = None
    seq = 0
    nodes = 0
    hit_time = hit_nodes = incomplete = False
    intervals0 = (tuple((c_lo, c_hi) for c_lo, c_hi in [(ir.control.th_lo, ir.control.th_hi)] * ir.n)
                  if params.certify else None)
    heap: list = []

    def complete_z(x, fixed):
        dd = eng.pair_depths(x, fixed)
        return tuple(z if z >= 0 else dd[p][1] for p, z in enumerate(fixed))

    def try_incumbent(x, fixed, cuts, intervals):
        nonlocal ub, best_x, best_z
        zfull = complete_z(x, fixed)
        zq = tuple(-1 if skip[p] else z for p, z in enumerate(zfull))
        got = eng.polish(zq, cuts, intervals, x)
        if got is None:
            return False
        xp, objp = got
        if objp < ub and eng.certify_point(xp, complete_z(xp, tuple(-1 if skip[p] else z
                                                                 for p, z in enumerate(zq)))):
            ub, best_x = objp, xp
            best_z = complete_z(xp, tuple(-1 if skip[p] else z for p, z in enumerate(zq)))
            return True
        return False

    if warm is not None:
        if len(warm.z) != n_pairs or len(warm.deltas) != ir.n:
            raise ShapeMismatch(f"warm start has {len(warm.deltas)} aircraft / {len(warm.z)} pairs, "
                                f"model has {ir.n} / {n_pairs}")
        if warm.has_point:
            xw = np.zeros(eng.nx)
            xw[:2 * ir.n] = np.array(warm.deltas).ravel()
            zw = tuple(-1 if skip[p] else int(z) for p, z in enumerate(warm.z))
            if all(zw[p] == -1 or pre[p] < 0 or zw[p] == pre[p] for p in range(n_pairs)):
                try_incumbent(xw, zw, (), intervals0)

    # depth first until the first incumbent, best bound afterwards
    def key(node, s):
        return (node.lb, -node.depth, s) if best_x is not None else (-node.depth, s)

    def push(node):
        nonlocal seq
        heapq.heappush(heap, (key(node, seq), seq, node))
        seq += 1

    def open_lb():
        return min(e[2].lb for e in heap)

    db = _Nogoods(n_pairs)
    presolved = {(q, z) for q, z in enumerate(pre) if z >= 0}
    parents: dict[int, tuple[int | None, tuple[int, int] | None]] = {}
    pending: dict[int, dict[int, frozenset]] = {}
    proven = False  # the root itself is infeasible
    nid_seq = 0

    def new_node(lb, fixed, cuts, intervals, depth, parent, lit, reasons):
        nonlocal nid_seq
        nid_seq += 1
        parents[nid_seq] = (parent, lit)
        return _Node(lb, fixed, cuts, intervals, depth, None, nid_seq, parent, lit, reasons)

    def learn(ng: frozenset) -> frozenset:
        ng = frozenset(l for l in ng if l not in presolved)
        db.add(ng)
        return ng

    def report(nid: int, ng: frozenset):
        """``ng`` proves node ``nid`` infeasible; resolve it up the tree."""
        nonlocal proven
        while True:
            parent, lit = parents[nid]
            if parent is None:
                proven = True
                return
            if lit is None or lit not in ng:
                nid = parent
                continue
            box = pending.setdefault(parent, {})
            box[lit[1]] = ng
            if len(box) < 2:
                return
            ng = learn((box[0] | box[1]) - {(lit[0], 0), (lit[0], 1)})
            nid = parent

    def propagate(node):
        """Apply learned nogoods; returns the node (possibly with more sides fixed) or a nogood."""
        fixed, reasons = list(node.fixed), list(node.reasons)
        while True:
            hit, forced = db.scan(fixed)
            if hit is not None:
                return _expand(hit, reasons)
            if not forced:
                break
            for q, z, why in forced:
                if fixed[q] == -1:
                    fixed[q] = z
                    reasons.append((q, why))
        if len(reasons) == len(node.reasons):
            return node
        return _Node(node.lb, tuple(fixed), node.cuts, node.intervals, node.depth, node.hint,
                     node.nid, node.parent, node.lit, tuple(reasons))

    push(new_node(-math.inf, root_fixed, (), intervals0, 0, None, None, ()))
    global_lb = -math.inf
    dived = not params.dive

    depth_first = True
    while heap and not proven:
        if depth_first and best_x is not None:
            depth_first = False
            heap = [(key(e[2], e[1]), e[1], e[2]) for e in heap]
            heapq.heapify(heap)
        lb_top = heap[0][0][0] if not depth_first else -math.inf
        global_lb = max(global_lb, min(lb_top, ub))
        if ub < math.inf and (ub - lb_top) <= params.rel_gap * max(abs(ub), 1e-12):
            break
        if lb_top >= ub:
            heap.clear()
            break
        if time.perf_counter() - t0 > params.time_limit:
            hit_time = True
            break
        if nodes >= params.node_limit:
            hit_nodes = True
            break
        node = heapq.heappop(heap)[2]
        nodes += 1
        got = propagate(node)
        if isinstance(got, frozenset):
            report(node.nid, learn(got))
            continue
        node = got
        out = eng.relax(node, ub)
        if out is None:
            continue
        if isinstance(out, _Infeasible):
            if out.nogood is not None:
                report(node.nid, learn(_expand(out.nogood, node.reasons)))
            continue
        if isinstance(out, str):
            incomplete = True
            continue
        x, obj, cuts = out
        obj = max(obj, node.lb)
        if not dived or (params.dive and best_x is None and nodes % params.dive_every == 0):
            dived = True
            _dive(eng, x, node, cuts, depths_of, try_incumbent, ub_ref=lambda: ub, learn=learn)
        dd = depths_of(x, node.fixed)
        worst = max(dd.items(), key=lambda kv: (kv[1][0], -kv[0]), default=None)
        if worst is not None and worst[1][0] > FEAS_TOL:
            p, (_, zbest) = worst
            for z in (zbest, 1 - zbest):
                fx = list(node.fixed)
                fx[p] = z
                push(new_node(obj, tuple(fx), cuts, node.intervals, node.depth + 1, node.nid,
                              (p, z), node.reasons))
            continue
        if params.certify:
            d = eng.deltas(x)
            norms = np.hypot(d[:, 0], d[:, 1])
            viol = ir.control.q_lo - norms
            k = int(np.argmax(viol))
            if viol[k] > params.cut_tol:
                try_incumbent(x, node.fixed, (), node.intervals)
                a, b = node.intervals[k]
                w = b - a
                ang = math.atan2(d[k, 1], d[k, 0])
                phi = min(max(ang, a + 0.1 * w), b - 0.1 * w)
                for lo, hi in ((a, phi), (phi, b)):
                    iv = list(node.intervals)
                    iv[k] = (lo, hi)
                    push(new_node(obj, node.fixed, (), tuple(iv), node.depth + 1, node.nid,
                                  None, node.reasons))
                eng.cut_rounds += 1
                continue
        try_incumbent(x, node.fixed, cuts, node.intervals)
        # the node is resolved: its bound is obj, ub now <= obj up to polishing

    if proven:
        heap.clear()

    elapsed = time.perf_counter() - t0
    if heap:
        lb = min(open_lb(), ub)
    else:
        lb = ub if ub < math.inf else math.inf
    lb = max(lb, global_lb) if math.isfinite(global_lb) and lb < math.inf else lb
    lb = min(lb, ub)

    if best_x is None:
        status = "TimeOut" if (hit_time or hit_nodes or incomplete) else "Infeasible"
        sol = Solution(status)
        gap = math.inf
        rep = SolveReport(math.inf, lb, gap, elapsed, eng.cut_rounds,
                          nodes, status, eng.qp_solves, params.certify, len(db))
        return sol, rep
    gap = (ub - lb) / max(abs(ub), 1e-12) if math.isfinite(lb) else math.inf
    gap = max(gap, 0.0)
    if gap <= params.rel_gap + 1e-12 and not incomplete:
        status = "Optimal"
    elif hit_time:
        status = "TimeOut"
    else:
        status = "Feasible"
    sol = _make_solution(ir, best_x, best_z, status)
    rep = SolveReport(ub, lb, gap, elapsed, eng.cut_rounds, nodes, status, eng.qp_solves,
                      params.certify, len(db))
    return sol, rep


def _dive(eng, x, node, cuts, depths_of, try_incumbent, ub_ref, learn=None):
    """Fix the deepest conflicting pair to its nearer side until none is left."""
    fixed = list(node.fixed)
    for _ in range(len(fixed) + 1):
        dd = depths_of(x, tuple(fixed))
        worst = max(dd.items(), key=lambda kv: (kv[1][0], -kv[0]), default=None)
        if worst is None or worst[1][0] <= FEAS_TOL:
            try_incumbent(x, tuple(fixed), cuts, node.intervals)
            return
        p, (_, z) = worst
        fixed[p] = z
        out = eng.relax(_Node(node.lb, tuple(fixed), cuts, node.intervals), ub_ref())
        if isinstance(out, _Infeasible) and out.nogood is not None and learn is not None:
            learn(_expand(out.nogood, node.reasons))
        if out is None or isinstance(out, (str, _Infeasible)):
            return
        x, _, cuts = out


def _make_solution(ir: ModelIR, x, z, status) -> Solution:
    n = ir.n
    deltas = tuple((float(x[2 * i]), float(x[2 * i + 1])) for i in range(n))
    ctrls, m1 = recover_controls(deltas, ir.control.w)
    vel = tuple(a.velocity(q, th) for a, (q, th) in zip(ir.instance.aircraft, ctrls))
    return Solution(status, deltas, tuple(ctrls), vel, tuple(int(v) for v in z),
                    surrogate_objective(deltas, ir.control.w), m1)


def warm_start(ir: ModelIR, s: Solution, params: SolveParams | None = None):
    """Solve ``ir`` seeded with the incumbent ``s`` from a related model."""
    return solve(ir, params, warm=s)


def separation_ok(ir: ModelIR, sol: Solution, tol: float = 1e-6) -> bool:
    """Nominal geometric separation of every pair at the solution's controls."""
    for i, j in ir.pairs:
        dx0, dy0, v = relative_state(ir.instance, i, j, sol.controls)
        if assess_pair(dx0, dy0, v, ir.instance.d).d_min < ir.instance.d - tol:
            return False
    return True


# ---------------------------------------------------------------- serialization

def _f(v: float):
    return float(v) if math.isfinite(v) else None


def solution_to_dict(sol: Solution, ir: ModelIR | None = None) -> dict:
    out = {
        "schema": "deconflict.solution/1",
        "status": sol.status,
        "objective": {"surrogate": _f(sol.surrogate), "model1": _f(sol.model1)},
        "aircraft": [{"delta": list(d), "q": q, "theta": th, "vx": v[0], "vy": v[1]}
                     for d, (q, th), v in zip(sol.deltas, sol.controls, sol.velocities)],
        "z": list(sol.z),
    }
    if ir is not None:
        out["instance"] = ir.instance.id
        out["pairs"] = [list(p) for p in ir.pairs]
        out["kind"] = ir.kind
        out["gamma"] = ir.gamma
    return out


def solution_from_dict(obj: dict) -> Solution:
    ac = obj.get("aircraft", [])
    obj_d = obj.get("objective", {})
    return Solution(
        obj["status"],
        tuple(tuple(a["delta"]) for a in ac),
        tuple((a["q"], a["theta"]) for a in ac),
        tuple((a["vx"], a["vy"]) for a in ac),
        tuple(obj.get("z", [])),
        obj_d.get("surrogate") if obj_d.get("surrogate") is not None else math.inf,
        obj_d.get("model1") if obj_d.get("model1") is not None else math.inf,
    )


def report_to_dict(rep: SolveReport) -> dict:
    return {"ub": _f(rep.ub), "lb": _f(rep.lb), "gap": _f(rep.gap), "time_sec": rep.time_sec,
            "n_cut_rounds": rep.n_cut_rounds, "nodes": rep.nodes, "status": rep.status,
            "qp_solves": rep.qp_solves, "certify": rep.certify, "nogoods": rep.nogoods}


def save_solution(path, sol: Solution, rep: SolveReport | None = None, ir: ModelIR | None = None):
    obj = solution_to_dict(sol, ir)
    if rep is not None:
        obj["report"] = report_to_dict(rep)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_solution(path) -> Solution:
    return solution_from_dict(json.loads(Path(path).read_text()))

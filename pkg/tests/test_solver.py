import json
import math
from dataclasses import replace

import numpy as np
import pytest

from deconflict.controls import ControlSpec, UncertaintySpec
from deconflict.errors import ShapeMismatch
from deconflict.geometry import AircraftState, Instance
from deconflict.instances import RCPConfig, gen_cp, gen_rcp
from deconflict.model import build_deterministic, build_robust
from deconflict.solver import (Solution, SolveParams, cap_cut, floor_cut, load_solution,
                               report_to_dict, save_solution, separation_ok, solution_from_dict,
                               solution_to_dict, solve, warm_start)
from deconflict.verification import grid_oracle, verify_deterministic, verify_robust

C = ControlSpec()


def _solve_det(inst, **kw):
    return solve(build_deterministic(inst, C), SolveParams(**kw))


def test_solve_params_validation():
    with pytest.raises(ValueError):
        SolveParams(rel_gap=-1)
    with pytest.raises(ValueError):
        SolveParams(time_limit=0)


def test_cap_cut_example():
    cut = cap_cut((1.2, 0.0), 1.03)
    assert cut.coef == (2.4, 0.0)
    assert cut.rhs == pytest.approx(1.44 + 1.0609)
    assert 2.4 * 1.2 > cut.rhs


def test_cap_cut_never_removes_cap_points():
    rng = np.random.default_rng(0)
    for _ in range(200):
        star = rng.normal(size=2)
        star *= rng.uniform(1.04, 2.0) / np.linalg.norm(star)
        cut = cap_cut(tuple(star), 1.03)
        assert cut.coef[0] * star[0] + cut.coef[1] * star[1] > cut.rhs
        pts = rng.normal(size=(500, 2))
        pts *= (1.03 * np.sqrt(rng.uniform(size=500)) / np.linalg.norm(pts, axis=1))[:, None]
        assert np.all(pts @ np.array(cut.coef) <= cut.rhs + 1e-12)


def test_cap_cut_tangent_on_boundary():
    star = (1.03 * math.cos(0.3), 1.03 * math.sin(0.3))
    cut = cap_cut(star, 1.03)
    assert cut.coef[0] * star[0] + cut.coef[1] * star[1] == pytest.approx(cut.rhs)


def test_floor_cut_examples():
    cut = floor_cut((0.9, 0.0), 0.94)
    # stored as coef . d <= rhs, i.e. d_x >= 0.94
    assert cut.coef == (-1.0, -0.0) and cut.rhs == -0.94
    star = np.array([0.5, 0.3])
    cut = floor_cut(tuple(star), 0.94)
    proj = 0.94 * star / np.linalg.norm(star)
    assert np.dot(cut.coef, proj) == pytest.approx(cut.rhs)
    assert np.dot(cut.coef, star) > cut.rhs
    deg = floor_cut((0.0, 0.0), 0.94, math.pi / 6)
    assert deg.degenerate and deg.coef == (-1.0, 0.0)
    assert deg.rhs == pytest.approx(-0.94 * math.cos(math.pi / 6))


def test_floor_cut_can_remove_far_annulus_points():
    # a tangent at one end of a +/-30 degree cone cuts annulus points near the other end
    cut = floor_cut((0.9 * math.cos(math.pi / 6), 0.9 * math.sin(math.pi / 6)), 0.94)
    far = (0.95 * math.cos(-math.pi / 6), 0.95 * math.sin(-math.pi / 6))
    assert np.dot(cut.coef, far) > cut.rhs


def test_cp2_head_on():
    sol, rep = _solve_det(gen_cp(2), rel_gap=1e-6)
    assert sol.status == "Optimal" and rep.status == "Optimal"
    # closed form: project (1, 0) onto the tangent direction at asin(d / 400)
    assert sol.surrogate == pytest.approx((5 / 400) ** 2, rel=1e-6)
    (q0, t0), (q1, t1) = sol.controls
    assert q0 == pytest.approx(q1, abs=1e-9) and t0 == pytest.approx(t1, abs=1e-9)
    assert verify_deterministic(gen_cp(2), sol, 1e-6).passed


def test_already_separated_instance():
    inst = Instance("sep", (AircraftState(0, 0, 500, 0.0), AircraftState(0, 50, 500, 0.0),
                            AircraftState(100, -80, 450, math.pi / 2)))
    sol, rep = _solve_det(inst)
    assert sol.status == "Optimal"
    assert sol.surrogate == pytest.approx(0.0, abs=1e-12)
    for d in sol.deltas:
        assert d == pytest.approx((1.0, 0.0), abs=1e-9)


def test_infeasible_without_control_freedom():
    ir = build_deterministic(gen_cp(3), ControlSpec(1.0, 1.0, 0.0, 0.0))
    sol, rep = solve(ir)
    assert sol.status == "Infeasible" and rep.status == "Infeasible"
    assert not sol.has_point


def test_report_invariants_and_bounds():
    sol, rep = _solve_det(gen_cp(5))
    assert rep.lb <= rep.ub + 1e-12
    assert rep.gap == pytest.approx((rep.ub - rep.lb) / max(abs(rep.ub), 1e-12))
    assert rep.gap <= 0.01
    assert rep.nodes >= 1
    assert sol.surrogate == pytest.approx(rep.ub)


def test_solution_invariants():
    inst = gen_rcp(RCPConfig(8, seed=4))
    sol, _ = _solve_det(inst)
    assert sol.status == "Optimal"
    for q, th in sol.controls:
        assert C.q_lo - 1e-8 <= q <= C.q_hi + 1e-8
        assert C.th_lo - 1e-8 <= th <= C.th_hi + 1e-8
    assert separation_ok(build_deterministic(inst, C), sol)
    assert verify_deterministic(inst, sol, 1e-6).passed


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_bound_validity_against_grid(seed):
    rng = np.random.default_rng(seed)
    ac = []
    for k in range(3):
        a = rng.uniform(0, 2 * math.pi)
        ac.append(AircraftState(200 * math.cos(a), 200 * math.sin(a), rng.uniform(486, 594),
                                a + math.pi + rng.uniform(-0.1, 0.1)))
    inst = Instance(f"tri-{seed}", tuple(ac))
    sol, rep = _solve_det(inst, certify=True, rel_gap=1e-6)
    orc = grid_oracle(inst, C, 11, 11, objective="surrogate")
    assert rep.lb <= orc.best_objective + 1e-8


def test_determinism():
    inst = gen_rcp(RCPConfig(8, seed=5))
    u = UncertaintySpec.uniform(0.05, 2)
    runs = [solve(build_robust(inst, C, u), SolveParams()) for _ in range(2)]
    (s1, r1), (s2, r2) = runs
    assert s1 == s2
    assert replace(r1, time_sec=0) == replace(r2, time_sec=0)


def test_reduction_identities_cp4():
    inst = gen_cp(4)
    det = _solve_det(inst)[0].surrogate
    g0 = solve(build_robust(inst, C, UncertaintySpec.uniform(0.05, 0.0)))[0].surrogate
    e0 = solve(build_robust(inst, C, UncertaintySpec.uniform(0.0, 4.0)))[0].surrogate
    assert g0 == pytest.approx(det, rel=1e-6)
    assert e0 == pytest.approx(det, rel=1e-6)


def test_monotone_in_gamma_and_eps_cp4():
    inst = gen_cp(4)
    by_gamma = [solve(build_robust(inst, C, UncertaintySpec.uniform(0.05, g)))[1].ub
                for g in (0, 1, 2, 3, 4)]
    assert all(b >= a * (1 - 0.01) for a, b in zip(by_gamma, by_gamma[1:]))
    by_eps = [solve(build_robust(inst, C, UncertaintySpec.uniform(e, 4)))[1].ub
              for e in (0.0, 0.025, 0.05)]
    assert all(b >= a * (1 - 0.01) for a, b in zip(by_eps, by_eps[1:]))


def test_robust_solution_passes_vertex_audit():
    inst = gen_cp(5)
    u = UncertaintySpec.uniform(0.05, 4)
    sol, rep = solve(build_robust(inst, C, u))
    assert sol.status == "Optimal"
    assert verify_robust(inst, sol, u, 1e-6).passed


def test_certify_mode_agrees():
    inst = gen_cp(5)
    a = _solve_det(inst)[1]
    b = _solve_det(inst, certify=True)[1]
    assert b.certify
    assert abs(a.ub - b.ub) <= 0.01 * max(a.ub, b.ub)


def test_warm_start_same_objective():
    inst = gen_cp(5)
    cold0, _ = solve(build_robust(inst, C, UncertaintySpec.uniform(0.05, 0)))
    ir1 = build_robust(inst, C, UncertaintySpec.uniform(0.05, 1))
    cold = solve(ir1)[1]
    warm = warm_start(ir1, cold0)[1]
    assert warm.ub == pytest.approx(cold.ub, rel=0.01)
    assert warm.status == cold.status


def test_warm_start_infeasible_incumbent_is_discarded():
    inst = gen_cp(4)
    nominal = Solution("Optimal", ((1.0, 0.0),) * 4, ((1.0, 0.0),) * 4, (), (0,) * 6, 0.0, 0.0)
    sol, rep = warm_start(build_deterministic(inst, C), nominal)
    assert sol.status == "Optimal"
    assert sol.surrogate > 1e-4
    assert verify_deterministic(inst, sol).passed


def test_warm_start_shape_mismatch():
    bad = Solution("Optimal", ((1.0, 0.0),) * 3, ((1.0, 0.0),) * 3, (), (0,) * 3, 0.0, 0.0)
    with pytest.raises(ShapeMismatch):
        warm_start(build_deterministic(gen_cp(4), C), bad)


def test_time_limit_reports_timeout():
    inst = gen_rcp(RCPConfig(20, seed=1))
    u = UncertaintySpec.uniform(0.05, 4)
    sol, rep = solve(build_robust(inst, C, u), SolveParams(time_limit=0.5))
    assert rep.status in ("TimeOut", "Optimal", "Feasible", "Infeasible")
    assert rep.time_sec < 30
    if rep.status == "TimeOut" and sol.has_point:
        assert verify_robust(inst, sol, u).passed


def test_solution_json_round_trip(tmp_path):
    inst = gen_cp(3)
    ir = build_deterministic(inst, C)
    sol, rep = solve(ir)
    save_solution(tmp_path / "s.json", sol, rep, ir)
    back = load_solution(tmp_path / "s.json")
    assert back.controls == sol.controls and back.z == sol.z
    assert back.surrogate == sol.surrogate and back.status == sol.status
    obj = json.loads((tmp_path / "s.json").read_text())
    assert obj["schema"] == "deconflict.solution/1"
    assert set(obj["report"]) >= {"ub", "lb", "gap", "time_sec", "n_cut_rounds", "nodes", "status"}
    assert solution_from_dict(solution_to_dict(sol)) == back
    inf = report_to_dict(solve(build_deterministic(inst, ControlSpec(1, 1, 0, 0)))[1])
    assert inf["ub"] is None

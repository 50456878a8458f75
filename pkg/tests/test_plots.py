import xml.etree.ElementTree as ET

import pytest

from deconflict.bench import ResultsRow
from deconflict.controls import ControlSpec, UncertaintySpec
from deconflict.errors import UnauditedResult
from deconflict.instances import gen_cp
from deconflict.model import build_deterministic, build_robust
from deconflict.plots import (Overlay, pairwise_dmin, plot_dmin_histogram, plot_dmin_strip,
                              plot_feasibility_scatter, plot_trajectories)
from deconflict.solver import SolveParams, solve
from deconflict.verification import verify_deterministic, verify_robust

SVG = "{http://www.w3.org/2000/svg}"


def _gids(path, prefix):
    root = ET.parse(path).getroot()
    return [e.get("id") for e in root.iter() if (e.get("id") or "").startswith(prefix)]


def _texts(path):
    root = ET.parse(path).getroot()
    return ["".join(e.itertext()) for e in root.iter(f"{SVG}text")]


@pytest.fixture(scope="module")
def cp10_overlays():
    # audited incumbents suffice for plotting; CP-10 is not solved to the gap here
    inst = gen_cp(10)
    c = ControlSpec()
    p = SolveParams(time_limit=3)
    det = solve(build_deterministic(inst, c), p)[0]
    u = UncertaintySpec.uniform(0.05, 2)
    rob = solve(build_robust(inst, c, u), p)[0]
    assert det.has_point and rob.has_point
    return inst, [Overlay("deterministic", det.controls, verify_deterministic(inst, det), "det"),
                  Overlay("robust", rob.controls, verify_robust(inst, rob, u), "rob")]


def test_trajectories_cp10(tmp_path, cp10_overlays):
    inst, ovs = cp10_overlays
    info = plot_trajectories(inst, ovs, tmp_path / "t.svg")
    assert info.n_lines == 30
    ids = _gids(info.path, "traj-")
    assert len(ids) == 30
    assert sum(i.startswith("traj-nominal-") for i in ids) == 10


def test_trajectories_byte_identical(tmp_path, cp10_overlays):
    inst, ovs = cp10_overlays
    a = plot_trajectories(inst, ovs, tmp_path / "a.svg").path.read_bytes()
    b = plot_trajectories(inst, ovs, tmp_path / "b.svg").path.read_bytes()
    assert a == b


def test_refuses_unaudited(tmp_path):
    inst = gen_cp(4)
    nominal = [(1.0, 0.0)] * 4
    bad = verify_deterministic(inst, nominal)
    with pytest.raises(UnauditedResult):
        plot_trajectories(inst, [Overlay("robust", nominal, bad)], tmp_path / "x.svg")
    with pytest.raises(UnauditedResult):
        plot_trajectories(inst, [Overlay("robust", nominal, None)], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        plot_trajectories(inst, [Overlay("other", nominal, bad)], tmp_path / "x.svg")


def test_strip_reference_line(tmp_path, cp10_overlays):
    inst, ovs = cp10_overlays
    groups = {0: pairwise_dmin(inst, ovs[0].controls), 2: pairwise_dmin(inst, ovs[1].controls)}
    info = plot_dmin_strip(groups, tmp_path / "s.svg", "Gamma")
    assert info.ref_y == 5.0
    assert info.n_points == 2 * 45
    assert _gids(info.path, "separation-norm")
    assert min(min(v) for v in groups.values()) >= 5.0 - 1e-6
    with pytest.raises(ValueError):
        plot_dmin_strip({}, tmp_path / "e.svg", "Gamma")


def test_histogram(tmp_path):
    vals = pairwise_dmin(gen_cp(6))
    info = plot_dmin_histogram(vals, tmp_path / "h.svg")
    assert info.n_points == 15 and info.ref_y == 5.0
    assert _gids(info.path, "separation-norm")


def test_scatter_axes(tmp_path):
    rows = [ResultsRow(4.0, 0.05, f"RCP-20-{k}", 1e-2, 0.0, 1.0, 0, s, 10 + k, 900.0, 50.0 + k,
                       0.0, True, 3)
            for k, s in enumerate(["Optimal", "Infeasible", "TimeOut"])]
    info = plot_feasibility_scatter(rows, tmp_path / "sc.svg")
    texts = _texts(info.path)
    assert "n_c" in texts and "D^min (NM)" in texts
    assert info.n_points == 3

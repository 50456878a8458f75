"""Sweep harness: one solve per (instance, gamma, eps) cell, CSV results and summaries.

Every cell writes its own JSON record under ``cells/`` plus the solution under
``solutions/``; ``results.csv`` and ``summary.csv`` are rebuilt from the records. A cell
whose record exists with the same configuration hash is skipped, so re-running a finished
sweep does nothing. Cells of one instance run in order in one worker; workers take whole
instances, capped by ``DECONFLICT_THREADS``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from .controls import ControlSpec, UncertaintySpec
from .geometry import Instance, detect_conflicts
from .instances import CPConfig, RCPConfig, gen_cp, gen_rcp, load_instance
from .model import build_deterministic, build_robust
from .solver import SolveParams, SolveReport, Solution, save_solution, solve
from .verification import verify_deterministic, verify_robust

RESULTS_SCHEMA = 1
RESULTS_COLUMNS = ("gamma", "eps_bar", "instance_id", "ub", "gap", "time_sec", "n_cut_rounds",
                   "status", "n_c", "d_min_total", "d_min_conflict", "post_worst_margin",
                   "audit_passed", "nodes")
SUMMARY_COLUMNS = ("family", "size", "gamma", "eps_bar", "group_size", "n_solved",
                   "ub_mean", "ub_std", "gap_mean", "gap_std", "time_mean", "time_std",
                   "cuts_mean", "cuts_std", "n_t", "n_inf")
STATUSES = ("Optimal", "Feasible", "Infeasible", "TimeOut")


@dataclass(frozen=True)
class ResultsRow:
    gamma: float
    eps_bar: float
    instance_id: str
    ub: float
    gap: float
    time_sec: float
    n_cut_rounds: int
    status: str
    n_c: int
    d_min_total: float      # sum of nominal closest-approach distances over all pairs, NM
    d_min_conflict: float   # the same sum over conflicting pairs only, NM
    post_worst_margin: float
    audit_passed: bool
    nodes: int = 0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    def to_csv(self) -> list[str]:
        out = []
        for name in RESULTS_COLUMNS:
            v = getattr(self, name)
            out.append(_fmt(v))
        return out

    @classmethod
    def from_csv(cls, rec: dict) -> "ResultsRow":
        kw = {}
        for f in fields(cls):
            raw = rec[f.name]
            if f.name in ("instance_id", "status"):
                kw[f.name] = raw
            elif f.name == "audit_passed":
                kw[f.name] = raw == "true"
            elif f.name in ("n_cut_rounds", "n_c", "nodes"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = _parse(raw)
        return cls(**kw)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _parse(s: str) -> float:
    return float(s)


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class BenchConfig:
    cp_sizes: tuple[int, ...] = ()
    rcp_sizes: tuple[int, ...] = ()
    rcp_count: int = 10
    rcp_seed_base: int = 1
    instance_files: tuple[str, ...] = ()
    control: ControlSpec = field(default_factory=ControlSpec)
    gammas: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0, 4.0)
    eps_list: tuple[float, ...] = (0.0, 0.025, 0.05, 0.075, 0.10)
    params: SolveParams = field(default_factory=SolveParams)
    out_dir: str = "bench-out"

    def __post_init__(self):
        if not (self.cp_sizes or self.rcp_sizes or self.instance_files):
            raise ValueError("the sweep selects no instances")
        if not self.gammas or not self.eps_list:
            raise ValueError("gamma and eps lists must be non-empty")
        for g in self.gammas:
            if not 0 <= g <= 4:
                raise ValueError(f"gamma {g} outside [0, 4]")
        for e in self.eps_list:
            if e < 0:
                raise ValueError(f"eps {e} must be non-negative")
        if self.rcp_count < 1:
            raise ValueError("rcp_count must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("cp_sizes", "rcp_sizes", "instance_files", "gammas", "eps_list"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d)
        if "control" in d:
            d["control"] = ControlSpec(**d["control"])
        if "params" in d:
            d["params"] = SolveParams(**d["params"])
        for k in ("cp_sizes", "rcp_sizes", "instance_files", "gammas", "eps_list"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self) -> str:
        """Hash of everything that changes a cell's outcome (not the output directory)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def instances_for(cfg: BenchConfig) -> list[Instance]:
    out = [gen_cp(CPConfig(n)) for n in cfg.cp_sizes]
    for n in cfg.rcp_sizes:
        for k in range(1, cfg.rcp_count + 1):
            out.append(gen_rcp(RCPConfig(n, seed=cfg.rcp_seed_base + k - 1, index=k)))
    out.extend(load_instance(p) for p in cfg.instance_files)
    ids = [i.id for i in out]
    if len(set(ids)) != len(ids):
        raise ValueError("instance ids in a sweep must be unique")
    return out


def family_size(instance_id: str) -> tuple[str, int]:
    parts = instance_id.split("-")
    try:
        return parts[0], int(parts[1])
    except (IndexError, ValueError):
        return instance_id, 0


# ---------------------------------------------------------------- one cell

def cell_key(instance_id: str, gamma: float, eps: float) -> str:
    return f"{instance_id}__g{gamma:g}__e{eps:g}"


def run_cell(inst: Instance, gamma: float, eps: float, control: ControlSpec,
             params: SolveParams) -> tuple[ResultsRow, Solution, SolveReport, dict]:
    """Build, solve (timed alone) and audit one cell."""
    pre = detect_conflicts(inst)
    conf = [a.d_min for a in pre.assessments.values() if a.in_conflict]
    u = UncertaintySpec.uniform(eps, gamma)
    robust = gamma > 0 and eps > 0
    ir = build_robust(inst, control, u) if robust else build_deterministic(inst, control)
    t0 = time.perf_counter()
    sol, rep = solve(ir, params)
    elapsed = time.perf_counter() - t0
    audit: dict = {"deterministic": None, "robust": None}
    margin, passed = math.nan, False
    if sol.has_point:
        det = verify_deterministic(inst, sol)
        audit["deterministic"] = det.to_dict()
        margin, passed = det.worst_margin, det.passed
        if robust:
            rob = verify_robust(inst, sol, u)
            audit["robust"] = rob.to_dict()
            margin, passed = min(margin, rob.worst_margin), passed and rob.passed
    row = ResultsRow(float(gamma), float(eps), inst.id, float(rep.ub), float(rep.gap), elapsed,
                     int(rep.n_cut_rounds), rep.status, pre.n_conflicts, pre.d_min_total,
                     math.fsum(conf), float(margin), bool(passed), int(rep.nodes))
    return row, sol, rep, audit


def _row_dict(row: ResultsRow) -> dict:
    return {k: getattr(row, k) for k in RESULTS_COLUMNS}


def _cells_for(inst_id: str, cfg: BenchConfig) -> list[tuple[float, float]]:
    return [(g, e) for g in cfg.gammas for e in cfg.eps_list]


def _run_instance(args) -> list[str]:
    inst, cfg, fp = args
    out = Path(cfg.out_dir)
    done = []
    for g, e in _cells_for(inst.id, cfg):
        key = cell_key(inst.id, g, e)
        rec_path = out / "cells" / f"{key}.json"
        if _cell_done(rec_path, fp):
            continue
        row, sol, rep, audit = run_cell(inst, g, e, cfg.control, cfg.params)
        save_solution(out / "solutions" / f"{key}.json", sol, rep)
        rec = {"fingerprint": fp, "row": _jsonable(_row_dict(row)), "audit": audit,
               "instance": inst.id, "gamma": g, "eps": e}
        tmp = rec_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec, indent=2) + "\n")
        tmp.replace(rec_path)  # a cell is either absent or complete
        done.append(key)
    return done


def _jsonable(d: dict) -> dict:
    return {k: (_fmt(v) if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _cell_done(path: Path, fp: str) -> bool:
    if not path.exists():
        return False
    try:
        return json.loads(path.read_text()).get("fingerprint") == fp
    except (json.JSONDecodeError, OSError):
        return False


def _threads() -> int:
    raw = os.environ.get("DECONFLICT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"DECONFLICT_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- sweep

def run_bench(cfg: BenchConfig, threads: int | None = None) -> tuple[Path, Path]:
    """Run every missing cell, then rebuild ``results.csv`` and ``summary.csv``."""
    out = Path(cfg.out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    (out / "solutions").mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    insts = instances_for(cfg)
    manifest = {"schema": RESULTS_SCHEMA, "fingerprint": fp, "config": cfg.to_dict(),
                "cells": [cell_key(i.id, g, e) for i in insts for g, e in _cells_for(i.id, cfg)]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    jobs = [(inst, cfg, fp) for inst in insts]
    workers = min(threads or _threads(), len(jobs))
    if workers <= 1:
        for job in jobs:
            _run_instance(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            list(ex.map(_run_instance, jobs))
    rows = collect_rows(out, manifest["cells"])
    return write_results(out / "results.csv", rows), write_summary(out / "summary.csv", rows)


def collect_rows(out: Path, keys: Iterable[str]) -> list[ResultsRow]:
    rows = []
    for key in keys:
        p = out / "cells" / f"{key}.json"
        if p.exists():
            rec = json.loads(p.read_text())["row"]
            rows.append(ResultsRow.from_csv({k: _fmt(v) if not isinstance(v, str) else v
                                             for k, v in rec.items()}))
    return rows


def write_results(path: Path, rows: Sequence[ResultsRow]) -> Path:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_COLUMNS)
        for r in rows:
            w.writerow(r.to_csv())
    return Path(path)


def read_results(path: str | Path) -> list[ResultsRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != RESULTS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {rd.fieldnames}")
        return [ResultsRow.from_csv(rec) for rec in rd]


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return math.nan, math.nan
    if len(xs) == 1:
        return float(xs[0]), 0.0
    return statistics.fmean(xs), statistics.stdev(xs)


def summarize(rows: Sequence[ResultsRow]) -> list[dict]:
    """Group by (family, size, gamma, eps); statistics over Optimal and Feasible cells.

    ``n_solved + n_t + n_inf`` equals the group size.
    """
    groups: dict[tuple, list[ResultsRow]] = {}
    for r in rows:
        fam, size = family_size(r.instance_id)
        groups.setdefault((fam, size, r.gamma, r.eps_bar), []).append(r)
    out = []
    for (fam, size, g, e), rs in sorted(groups.items()):
        solved = [r for r in rs if r.status in ("Optimal", "Feasible")]
        ub = _mean_std([r.ub for r in solved])
        gap = _mean_std([r.gap for r in solved])
        tm = _mean_std([r.time_sec for r in solved])
        cu = _mean_std([float(r.n_cut_rounds) for r in solved])
        out.append({"family": fam, "size": size, "gamma": g, "eps_bar": e, "group_size": len(rs),
                    "n_solved": len(solved), "ub_mean": ub[0], "ub_std": ub[1],
                    "gap_mean": gap[0], "gap_std": gap[1], "time_mean": tm[0], "time_std": tm[1],
                    "cuts_mean": cu[0], "cuts_std": cu[1],
                    "n_t": sum(r.status == "TimeOut" for r in rs),
                    "n_inf": sum(r.status == "Infeasible" for r in rs)})
    return out


def write_summary(path: Path, rows: Sequence[ResultsRow]) -> Path:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summarize(rows):
            w.writerow([_fmt(s[c]) for c in SUMMARY_COLUMNS])
    return Path(path)

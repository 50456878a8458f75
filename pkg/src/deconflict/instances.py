"""Circle (CP) and random circle (RCP) benchmark instances and their JSON files.

RCP draws use numpy's Philox4x64-10 counter-based generator keyed by the seed. For each
aircraft the stream yields three doubles in order: circle angle, speed, heading jitter.
An aircraft that starts closer than ``d`` to an already placed one redraws its triple
from the same stream.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import GenerationExhausted, SchemaError
from .geometry import AircraftState, Instance

MAX_RESAMPLES = 10_000


@dataclass(frozen=True)
class CPConfig:
    n: int
    radius: float = 200.0
    speed: float = 500.0
    d: float = 5.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("CP needs n >= 2")
        if not self.radius > self.d:
            raise ValueError("radius must exceed d")


@dataclass(frozen=True)
class RCPConfig:
    n: int
    seed: int = 1
    radius: float = 200.0
    speed_lo: float = 486.0
    speed_hi: float = 594.0
    heading_jitter: float = math.pi / 6
    d: float = 5.0
    placement: str = "uniform"  # evenly spaced circle angles, or "random"
    index: int | None = None   # the ID in RCP-N-ID; defaults to the seed

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("RCP needs n >= 2")
        if self.speed_lo > self.speed_hi or self.speed_lo <= 0:
            raise ValueError("need 0 < speed_lo <= speed_hi")
        if self.heading_jitter < 0:
            raise ValueError("heading_jitter must be >= 0")
        if self.placement not in ("random", "uniform"):
            raise ValueError(f"unknown placement {self.placement!r}")


def gen_cp(cfg: CPConfig | int) -> Instance:
    if isinstance(cfg, int):
        cfg = CPConfig(cfg)
    ac = []
    for k in range(cfg.n):
        a = 2.0 * math.pi * k / cfg.n
        ac.append(AircraftState(cfg.radius * math.cos(a), cfg.radius * math.sin(a), cfg.speed, a + math.pi))
    return Instance(f"CP-{cfg.n}", tuple(ac), cfg.d)


def rng_for(seed: int) -> np.random.Generator:
    """Philox4x64-10 keyed by the 64-bit seed, counter starting at zero."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def gen_rcp(cfg: RCPConfig) -> Instance:
    rng = rng_for(cfg.seed)
    placed: list[AircraftState] = []
    resamples = 0
    d2 = cfg.d * cfg.d
    while len(placed) < cfg.n:
        u_angle, u_speed, u_jit = rng.random(3)
        if cfg.placement == "uniform":
            a = 2.0 * math.pi * len(placed) / cfg.n
        else:
            a = 2.0 * math.pi * u_angle
        speed = cfg.speed_lo + (cfg.speed_hi - cfg.speed_lo) * u_speed
        jitter = -cfg.heading_jitter + 2.0 * cfg.heading_jitter * u_jit
        cand = AircraftState(cfg.radius * math.cos(a), cfg.radius * math.sin(a), speed, a + math.pi + jitter)
        if any((cand.x0 - p.x0) ** 2 + (cand.y0 - p.y0) ** 2 < d2 for p in placed):
            resamples += 1
            if resamples > MAX_RESAMPLES:
                raise GenerationExhausted(f"could not place {cfg.n} aircraft {cfg.d} NM apart")
            continue
        placed.append(cand)
    ident = cfg.index if cfg.index is not None else cfg.seed
    return Instance(f"RCP-{cfg.n}-{ident}", tuple(placed), cfg.d)


# ---------------------------------------------------------------- persistence

UNITS = {"length": "NM", "speed": "NM/h", "angle": "rad"}


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    return {
        "id": inst.id,
        "d": inst.d,
        "units": dict(UNITS),
        "aircraft": [{"x0": a.x0, "y0": a.y0, "speed": a.speed, "heading": a.heading}
                     for a in inst.aircraft],
    }


def _number(obj: dict, key: str, path: str) -> float:
    if key not in obj:
        raise SchemaError("missing field", f"{path}.{key}" if path else key)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"expected a finite number, got {v!r}", f"{path}.{key}" if path else key)
    return float(v)


def instance_from_dict(obj: Any) -> Instance:
    if not isinstance(obj, dict):
        raise SchemaError("instance must be a JSON object")
    if "id" not in obj:
        raise SchemaError("missing field", "id")
    d = _number(obj, "d", "")
    units = obj.get("units", UNITS)
    if not isinstance(units, dict):
        raise SchemaError("expected an object", "units")
    if units.get("length", "NM") != "NM":
        raise SchemaError(f"unsupported unit {units['length']!r}", "units.length")
    if units.get("speed", "NM/h") != "NM/h":
        raise SchemaError(f"unsupported unit {units['speed']!r}", "units.speed")
    angle_unit = units.get("angle", "rad")
    if angle_unit not in ("rad", "deg"):
        raise SchemaError(f"unsupported unit {angle_unit!r}", "units.angle")
    raw = obj.get("aircraft")
    if not isinstance(raw, list):
        raise SchemaError("missing or not a list", "aircraft")
    ac = []
    for k, a in enumerate(raw):
        path = f"aircraft[{k}]"
        if not isinstance(a, dict):
            raise SchemaError("expected an object", path)
        heading = _number(a, "heading", path)
        if angle_unit == "deg":
            heading = math.radians(heading)
        ac.append(AircraftState(_number(a, "x0", path), _number(a, "y0", path),
                                _number(a, "speed", path), heading))
    return Instance(str(obj["id"]), tuple(ac), d)


def dumps_instance(inst: Instance) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(instance_to_dict(inst), indent=2) + "\n"


def save_instance(inst: Instance, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_instance(inst))
    return path


def load_instance(path: str | Path) -> Instance:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return instance_from_dict(obj)


def write_rcp_batch(out_dir: str | Path, n: int, count: int, seed_base: int = 1,
                    **overrides) -> Path:
    """Write ``count`` RCP-n instances (IDs 1..count, seeds seed_base..) plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(1, count + 1):
        cfg = RCPConfig(n=n, seed=seed_base + k - 1, index=k, **overrides)
        inst = gen_rcp(cfg)
        fname = f"{inst.id}.json"
        save_instance(inst, out_dir / fname)
        entries.append({"id": inst.id, "seed": cfg.seed, "file": fname})
    cfg_dict = asdict(RCPConfig(n=n, **overrides))
    for key in ("n", "seed", "index"):
        cfg_dict.pop(key)
    manifest = {"family": "RCP", "n": n, "seed_base": seed_base, "count": count,
                "config": cfg_dict, "entries": entries}
    mpath = out_dir / f"RCP-{n}-manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2) + "\n")
    return mpath


def regenerate_from_manifest(manifest_path: str | Path) -> list[Instance]:
    m = json.loads(Path(manifest_path).read_text())
    cfg = {k: v for k, v in m["config"].items() if k not in ("n", "seed", "index")}
    return [gen_rcp(RCPConfig(n=m["n"], seed=e["seed"], index=int(e["id"].rsplit("-", 1)[1]), **cfg))
            for e in m["entries"]]

"""Simulation parameters and their validation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .core import GeometryParams, cycle_period, search_radius

STRATEGIES = ("proximity", "improved", "basic", "distance_sorted")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class SimConfig:
    addressing_bots: int = 100
    region_bots: int = 100
    regions: int = 20
    region_cols: int = 5
    region_rows: int = 4
    m: int = 9
    l: float = 100.0
    v: float = 30.0
    dynamics_period: int = 10
    p_join: float = 0.1
    p_leave: float = 0.1
    cycles: int = 1000
    objects: int = 100
    r_search: float | None = None
    perception_range: float | None = None
    cache_capacity: int | None = None
    cache_refresh_period: int = 50
    stabilization_period: int = 1
    retrieval_period: int | None = None
    strategy: str = "proximity"
    dynamics: bool = False
    seed: int = 42
    sample_window: int = 1000
    chord_bits: int = 32
    replicas: int = 3
    objects_per_lc: int = 10
    payload_size: int = 256
    check_invariants: bool = False

    # -- derived ------------------------------------------------------------

    @property
    def geometry(self) -> GeometryParams:
        side = math.isqrt(self.m) * self.l
        return GeometryParams(self.region_cols * side, self.region_rows * side, self.l, self.m, self.v)

    @property
    def search_range(self) -> float:
        return self.r_search if self.r_search is not None else search_radius(self.l, self.m)

    @property
    def perception(self) -> float:
        return self.perception_range if self.perception_range is not None else self.l

    @property
    def period(self) -> int:
        if self.retrieval_period is not None:
            return self.retrieval_period
        return cycle_period(search_radius(self.l, self.m), self.v) if self.v > 0 else 1

    # -- validation ---------------------------------------------------------

    def violations(self) -> list[str]:
        out = []
        for name in ("p_join", "p_leave"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                out.append(f"{name} out of [0,1]")
        for name in ("addressing_bots", "region_bots", "regions", "region_cols", "region_rows",
                     "dynamics_period", "cycles", "cache_refresh_period", "stabilization_period",
                     "sample_window", "replicas", "objects_per_lc"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.objects < 0:
            out.append("objects must be >= 0")
        if self.payload_size < 0:
            out.append("payload_size must be >= 0")
        root = math.isqrt(self.m) if self.m >= 1 else 0
        if self.m < 1 or root * root != self.m:
            out.append("m must be a perfect square")
        if self.l <= 0:
            out.append("l must be positive")
        if self.v < 0:
            out.append("v must be >= 0")
        if self.region_cols * self.region_rows != self.regions:
            out.append("region_cols * region_rows must equal regions")
        if self.chord_bits < 8:
            out.append("chord_bits must be >= 8")
        if self.retrieval_period is not None and self.retrieval_period < 1:
            out.append("retrieval_period must be >= 1")
        if self.v == 0 and self.retrieval_period is None:
            out.append("retrieval_period is required when v = 0")
        for name in ("r_search", "perception_range"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                out.append(f"{name} must be positive")
        if self.cache_capacity is not None and self.cache_capacity < 0:
            out.append("cache_capacity must be >= 0")
        if self.strategy not in STRATEGIES:
            out.append(f"strategy must be one of {', '.join(STRATEGIES)}")
        if not out and self.region_bots > self.geometry.grid_cols * self.geometry.grid_rows:
            out.append("region_bots exceeds the number of grids")
        if self.addressing_bots > 2 ** min(self.chord_bits, 62) // 4:
            out.append("addressing_bots too large for chord_bits")
        return out

    def validate(self) -> "SimConfig":
        problems = self.violations()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError([f"unknown field {name!r}" for name in unknown])
        problems = []
        values = {}
        for key, value in data.items():
            expected = known[key].type
            if value is None or _type_ok(expected, value):
                values[key] = value
            else:
                problems.append(f"{key}: expected {expected}, got {type(value).__name__}")
        if problems:
            raise ConfigError(problems)
        return cls(**values)


def _type_ok(annotation: str, value) -> bool:
    if isinstance(value, bool):
        return "bool" in annotation
    if isinstance(value, int):
        return "int" in annotation or "float" in annotation
    if isinstance(value, float):
        return "float" in annotation
    if isinstance(value, str):
        return annotation == "str"
    return False


def load_config(path: str | Path) -> SimConfig:
    """Read a JSON config; an empty file means all defaults."""
    text = Path(path).read_text()
    if not text.strip():
        return SimConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a JSON object"])
    return SimConfig.from_dict(data)


def validate_config(path: str | Path) -> dict:
    """Resolved config with defaults merged, plus every violation found."""
    config = load_config(path)
    return {"config": config.to_dict(), "violations": config.violations()}

"""Geometry, identifiers and hashing shared by the overlays and the client."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

DIGEST_SIZE = 32

ObjectId = str
LogicalComputerId = str
RegionId = str
NodeAddress = str


class DomainError(ValueError):
    """Input outside an operation's domain."""


class Coord(NamedTuple):
    x: float
    y: float


# Grid and region corners are plain coordinates whose components are exact
# multiples of the cell side.
GridCoord = Coord
RegionCoord = Coord


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class GeometryParams:
    """Map extent, grid side ``l``, grids per region ``m`` and client speed ``v``."""

    x_map: float = 1500.0
    y_map: float = 1200.0
    l: float = 100.0
    m: int = 9
    v: float = 30.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise DomainError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if self.l <= 0:
            out.append("l must be positive")
        root = math.isqrt(self.m) if self.m >= 1 else 0
        if self.m < 1 or root * root != self.m:
            out.append("m must be a perfect square")
        elif self.l > 0:
            side = root * self.l
            for name, extent in (("x_map", self.x_map), ("y_map", self.y_map)):
                if extent <= 0 or not _is_multiple(extent, side):
                    out.append(f"{name} must be a positive multiple of the region side {side:g}")
        return out

    @property
    def region_side(self) -> float:
        return math.isqrt(self.m) * self.l

    @property
    def grid_cols(self) -> int:
        return round(self.x_map / self.l)

    @property
    def grid_rows(self) -> int:
        return round(self.y_map / self.l)

    @property
    def region_cols(self) -> int:
        return round(self.x_map / self.region_side)

    @property
    def region_rows(self) -> int:
        return round(self.y_map / self.region_side)

    def contains(self, p: Coord) -> bool:
        return 0 <= p[0] < self.x_map and 0 <= p[1] < self.y_map

    def check(self, p: Coord) -> None:
        if not self.contains(p):
            raise DomainError(f"point {tuple(p)} outside map [0,{self.x_map:g}) x [0,{self.y_map:g})")

    def grid_of(self, p: Coord) -> GridCoord:
        self.check(p)
        return grid_of(p, self.l)

    def region_of(self, p: Coord) -> RegionCoord:
        self.check(p)
        return region_of(p, self.l, self.m)

    def grid_index(self, p: Coord) -> tuple[int, int]:
        self.check(p)
        return math.floor(p[0] / self.l), math.floor(p[1] / self.l)

    def grid_corner(self, ix: int, iy: int) -> GridCoord:
        return Coord(ix * self.l, iy * self.l)

    def regions(self) -> list[RegionCoord]:
        s = self.region_side
        return [Coord(i * s, j * s) for j in range(self.region_rows) for i in range(self.region_cols)]

    @property
    def search_radius(self) -> float:
        return search_radius(self.l, self.m)


def _is_multiple(value: float, unit: float) -> bool:
    q = value / unit
    return abs(q - round(q)) < 1e-9


def _floor_to(value: float, unit: float) -> float:
    return math.floor(value / unit) * unit


def grid_of(p: Coord, l: float, bounds: GeometryParams | None = None) -> GridCoord:
    """Lower-left corner of the grid holding ``p``; cells are half-open."""
    if bounds is not None:
        bounds.check(p)
    if p[0] < 0 or p[1] < 0:
        raise DomainError(f"point {tuple(p)} outside map")
    return Coord(_floor_to(p[0], l), _floor_to(p[1], l))


def region_of(p: Coord, l: float, m: int, bounds: GeometryParams | None = None) -> RegionCoord:
    if bounds is not None:
        bounds.check(p)
    if p[0] < 0 or p[1] < 0:
        raise DomainError(f"point {tuple(p)} outside map")
    s = math.isqrt(m) * l
    return Coord(_floor_to(p[0], s), _floor_to(p[1], s))


def search_radius(l: float, m: int) -> float:
    """Half diagonal of a square region of ``m`` grids with side ``l``."""
    root = math.isqrt(m) if m >= 1 else 0
    if l <= 0 or root * root != m:
        raise DomainError("search_radius needs l > 0 and a perfect-square m")
    return math.sqrt(2) / 2 * l * root


def cycle_period(d_r: float, v: float) -> int:
    """Retrieval period in whole cycles for a client moving at ``v`` per cycle."""
    if v <= 0:
        raise DomainError("velocity must be positive")
    # tolerate float noise such as sqrt(2)*150*sqrt(2) = 300.00000000000006
    return max(1, math.ceil(round(math.sqrt(2) * d_r / v, 9)))


def distance(p: Coord, q: Coord) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def merkle_levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    """All levels of the binary tree, leaves first and root last."""
    if not leaves:
        raise DomainError("merkle tree needs at least one leaf")
    level = list(leaves)
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(sha256(left + right))
        levels.append(nxt)
        level = nxt
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return merkle_levels(leaves)[-1][0]

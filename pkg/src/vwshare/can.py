"""2-D coordinate overlay of region bots: the location mapping service.

Zones are rectangles of whole grids, addressed in grid units.  A bot normally
owns one zone; after a departure whose zone cannot be merged into a rectangle
the receiving neighbour holds it as an extra fragment until a later join takes
that fragment over.
"""
from __future__ import annotations

import base64
import math
import random
from dataclasses import dataclass, field

from .chord import ChordRing, RoutingRetry, key_of
from .core import Coord, DomainError, GeometryParams, NodeAddress, sha256
from .inventory import Inventory, ObjectEntry

Cell = tuple[int, int]


class RouteRetry(RuntimeError):
    """Greedy routing stopped making progress."""


class WrongOwner(LookupError):
    def __init__(self, address: NodeAddress, cell: Cell):
        super().__init__(f"{address} does not own grid {cell}")
        self.address = address
        self.cell = cell


class NotFound(LookupError):
    pass


class AlreadyExists(LookupError):
    pass


@dataclass(frozen=True)
class Zone:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DomainError(f"degenerate zone {self}")

    def contains(self, cell: Cell) -> bool:
        return self.x <= cell[0] < self.x + self.w and self.y <= cell[1] < self.y + self.h

    def cells(self):
        for ix in range(self.x, self.x + self.w):
            for iy in range(self.y, self.y + self.h):
                yield ix, iy

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def centroid(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def distance_to(self, px: float, py: float) -> float:
        dx = max(self.x - px, 0.0, px - (self.x + self.w))
        dy = max(self.y - py, 0.0, py - (self.y + self.h))
        return math.hypot(dx, dy)

    def abuts(self, other: "Zone") -> bool:
        x_overlap = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        y_overlap = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        if self.x + self.w == other.x or other.x + other.w == self.x:
            return y_overlap > 0
        if self.y + self.h == other.y or other.y + other.h == self.y:
            return x_overlap > 0
        return False

    def merged(self, other: "Zone") -> "Zone | None":
        """Union of two abutting zones if it is itself a rectangle."""
        if self.y == other.y and self.h == other.h:
            if self.x + self.w == other.x:
                return Zone(self.x, self.y, self.w + other.w, self.h)
            if other.x + other.w == self.x:
                return Zone(other.x, self.y, self.w + other.w, self.h)
        if self.x == other.x and self.w == other.w:
            if self.y + self.h == other.y:
                return Zone(self.x, self.y, self.w, self.h + other.h)
            if other.y + other.h == self.y:
                return Zone(self.x, other.y, self.w, self.h + other.h)
        return None

    def split(self) -> tuple["Zone", "Zone"]:
        """Halve along the longer axis; the left/bottom half keeps the extra grid."""
        if self.w == 1 and self.h == 1:
            raise DomainError("cannot split a single-grid zone")
        if self.w >= self.h:
            keep = math.ceil(self.w / 2)
            return Zone(self.x, self.y, keep, self.h), Zone(self.x + keep, self.y, self.w - keep, self.h)
        keep = math.ceil(self.h / 2)
        return Zone(self.x, self.y, self.w, keep), Zone(self.x, self.y + keep, self.w, self.h - keep)


@dataclass
class ObjectLocationRecord:
    oid: str
    ocoord: Coord
    lcid: str
    addressing_bot: NodeAddress | None = None
    cache_version: int = 0


@dataclass
class RegionBot:
    address: NodeAddress
    zones: list[Zone]
    neighbors: set[NodeAddress] = field(default_factory=set)
    objects: dict[Cell, dict[str, ObjectLocationRecord]] = field(default_factory=dict)
    inventories: dict[Cell, Inventory] = field(default_factory=dict)
    handled: int = 0
    forwarded: int = 0

    def owns(self, cell: Cell) -> bool:
        return any(z.contains(cell) for z in self.zones)

    def distance_to(self, px: float, py: float) -> float:
        return min(z.distance_to(px, py) for z in self.zones)

    def centroid_distance(self, px: float, py: float) -> float:
        return min(math.hypot(cx - px, cy - py) for cx, cy in (z.centroid for z in self.zones))

    def records(self):
        for per_cell in self.objects.values():
            yield from per_cell.values()

    @property
    def load(self) -> int:
        return self.handled + self.forwarded


def region_rid(rcoord: Coord) -> str:
    """Deterministic 30-character region id."""
    raw = sha256(f"region:{rcoord[0]:g},{rcoord[1]:g}".encode())
    return base64.b64encode(raw, altchars=b"Aa").decode()[:30]


class CanOverlay:
    def __init__(self, geom: GeometryParams, rng: random.Random | None = None):
        self.geom = geom
        self.cols = geom.grid_cols
        self.rows = geom.grid_rows
        self.rng = rng or random.Random(0)
        self.bots: dict[NodeAddress, RegionBot] = {}
        self._owner: list[list[NodeAddress | None]] = [[None] * self.rows for _ in range(self.cols)]
        self._serial = 0
        # message accounting: every message arriving at a bot bumps exactly one counter
        self.messages_received = 0
        self.departed_load = 0

    def __len__(self) -> int:
        return len(self.bots)

    # -- coordinates -------------------------------------------------------

    def normalize(self, p: Coord) -> tuple[float, float]:
        self.geom.check(p)
        return p[0] / self.geom.x_map, p[1] / self.geom.y_map

    def cell_of(self, p: Coord) -> Cell:
        return self.geom.grid_index(p)

    def _new_address(self) -> NodeAddress:
        addr = f"rb{self._serial:05d}"
        self._serial += 1
        return addr

    def owner_of_cell(self, cell: Cell) -> RegionBot:
        return self.bots[self._owner[cell[0]][cell[1]]]

    def owner_by_scan(self, cell: Cell) -> RegionBot:
        """Linear scan over every zone; independent of the owner index."""
        found = [b for b in self.bots.values() if b.owns(cell)]
        if len(found) != 1:
            raise DomainError(f"grid {cell} owned by {len(found)} bots")
        return found[0]

    def _paint(self, zone: Zone, address: NodeAddress) -> None:
        for ix, iy in zone.cells():
            self._owner[ix][iy] = address

    # -- membership --------------------------------------------------------

    def bootstrap(self) -> RegionBot:
        if self.bots:
            raise DomainError("overlay already bootstrapped")
        bot = RegionBot(self._new_address(), [Zone(0, 0, self.cols, self.rows)])
        self.bots[bot.address] = bot
        self._paint(bot.zones[0], bot.address)
        return bot

    def join(self, cell: Cell | None = None, max_attempts: int = 1000) -> RegionBot:
        if not self.bots:
            return self.bootstrap()
        for _ in range(max_attempts):
            if cell is None:
                cell = (self.rng.randrange(self.cols), self.rng.randrange(self.rows))
            owner = self.owner_of_cell(cell)
            frag = next(z for z in owner.zones if z.contains(cell))
            if len(owner.zones) > 1:
                owner.zones.remove(frag)
                return self._spawn(owner, frag)
            if frag.area > 1:
                keep, give = frag.split()
                owner.zones = [keep]
                return self._spawn(owner, give)
            cell = None  # single-grid zone: redirect to another random owner
        raise DomainError("no zone can be split")

    def _spawn(self, donor: RegionBot, zone: Zone) -> RegionBot:
        bot = RegionBot(self._new_address(), [zone])
        self.bots[bot.address] = bot
        self._paint(zone, bot.address)
        self._move_records(donor, bot, zone)
        self._refresh_neighbors({donor.address, bot.address} | donor.neighbors)
        return bot

    def leave(self, address: NodeAddress) -> None:
        bot = self.bots.get(address)
        if bot is None:
            raise DomainError(f"region bot {address} is not live")
        if len(self.bots) == 1:
            raise DomainError("cannot remove the last region bot")
        affected = set(bot.neighbors)
        for frag in list(bot.zones):
            receiver, merged_with = None, None
            for other in sorted(self.bots.values(), key=lambda b: b.address):
                if other is bot:
                    continue
                for z in other.zones:
                    if z.abuts(frag) and z.merged(frag) is not None:
                        receiver, merged_with = other, z
                        break
                if receiver:
                    break
            if receiver is None:
                receiver = min(
                    (b for b in self.bots.values() if b is not bot and any(z.abuts(frag) for z in b.zones)),
                    key=lambda b: b.address,
                )
                receiver.zones.append(frag)
            else:
                receiver.zones.remove(merged_with)
                receiver.zones.append(merged_with.merged(frag))
            self._coalesce(receiver)
            self._paint(frag, receiver.address)
            self._move_records(bot, receiver, frag)
            affected.add(receiver.address)
        self.departed_load += bot.load
        del self.bots[address]
        affected.discard(address)
        self._refresh_neighbors(affected)

    @staticmethod
    def _coalesce(bot: RegionBot) -> None:
        changed = True
        while changed and len(bot.zones) > 1:
            changed = False
            for i in range(len(bot.zones)):
                for j in range(i + 1, len(bot.zones)):
                    m = bot.zones[i].merged(bot.zones[j])
                    if m is not None:
                        bot.zones = [z for k, z in enumerate(bot.zones) if k not in (i, j)] + [m]
                        changed = True
                        break
                if changed:
                    break

    def _move_records(self, src: RegionBot, dst: RegionBot, zone: Zone) -> None:
        for cell in [c for c in src.objects if zone.contains(c)]:
            dst.objects.setdefault(cell, {}).update(src.objects.pop(cell))
        for cell in [c for c in src.inventories if zone.contains(c)]:
            dst.inventories[cell] = src.inventories.pop(cell)

    def _refresh_neighbors(self, addresses) -> None:
        everyone = list(self.bots.values())
        for addr in addresses:
            bot = self.bots.get(addr)
            if bot is None:
                continue
            old = bot.neighbors
            bot.neighbors = {
                o.address
                for o in everyone
                if o is not bot and any(a.abuts(b) for a in bot.zones for b in o.zones)
            }
            for lost in old - bot.neighbors:
                if lost in self.bots:
                    self.bots[lost].neighbors.discard(addr)
            for gained in bot.neighbors - old:
                self.bots[gained].neighbors.add(addr)

    def tiling_violations(self) -> list[str]:
        counts: dict[Cell, int] = {}
        for bot in self.bots.values():
            for z in bot.zones:
                for c in z.cells():
                    counts[c] = counts.get(c, 0) + 1
        out = []
        for ix in range(self.cols):
            for iy in range(self.rows):
                n = counts.pop((ix, iy), 0)
                if n != 1:
                    out.append(f"grid {(ix, iy)} covered {n} times")
        out.extend(f"zone cell {c} outside map" for c in counts)
        return out

    def random_bot(self, rng: random.Random | None = None) -> RegionBot:
        rng = rng or self.rng
        return self.bots[rng.choice(sorted(self.bots))]

    # -- routing -----------------------------------------------------------

    def _receive(self, bot: RegionBot, forwarded: bool) -> None:
        self.messages_received += 1
        if forwarded:
            bot.forwarded += 1
        else:
            bot.handled += 1

    def direct(self, bot: RegionBot) -> None:
        """Account a request sent straight to ``bot`` and answered there."""
        self._receive(bot, forwarded=False)

    def route_cell(self, start: RegionBot, cell: Cell, count_load: bool = True) -> tuple[RegionBot, int]:
        px, py = cell[0] + 0.5, cell[1] + 0.5
        cur, hops = start, 0
        seen = {cur.address}
        while not cur.owns(cell):
            best = min(
                (self.bots[a] for a in cur.neighbors),
                key=lambda b: (b.distance_to(px, py), b.centroid_distance(px, py), b.address),
                default=None,
            )
            if best is None or best.address in seen:
                raise RouteRetry(f"no progress from {cur.address} towards grid {cell}")
            if count_load:
                self._receive(cur, forwarded=True)
            seen.add(best.address)
            cur = best
            hops += 1
        if count_load:
            self._receive(cur, forwarded=False)
        return cur, hops

    def route(self, start: RegionBot, target: Coord, count_load: bool = True) -> tuple[RegionBot, int]:
        """Greedy route to the bot whose zone holds ``target``; returns (owner, forwards)."""
        return self.route_cell(start, self.cell_of(target), count_load)

    def neighbor_query(self, bot: RegionBot, cell: Cell) -> list[tuple[NodeAddress, Cell]]:
        """Owners of the four edge-adjacent grids of ``cell``, from ``bot``'s local view."""
        if not bot.owns(cell):
            raise WrongOwner(bot.address, cell)
        known = [bot] + [self.bots[a] for a in sorted(bot.neighbors)]
        out = []
        for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nxt = (cell[0] + dx, cell[1] + dy)
            if not (0 <= nxt[0] < self.cols and 0 <= nxt[1] < self.rows):
                continue
            owner = next(b for b in known if b.owns(nxt))
            out.append((owner.address, nxt))
        return out

    # -- location mapping service -----------------------------------------

    def region_cell(self, rcoord: Coord) -> Cell:
        return self.cell_of(rcoord)

    def inventory_create(self, inv: Inventory, start: RegionBot) -> int:
        owner, hops = self.route(start, inv.rcoord)
        cell = self.region_cell(inv.rcoord)
        if cell in owner.inventories:
            raise AlreadyExists(f"inventory for region {tuple(inv.rcoord)}")
        owner.inventories[cell] = inv
        return hops

    def object_create(self, record: ObjectLocationRecord, entry: ObjectEntry, start: RegionBot) -> int:
        """Store the location record at the grid owner and list the object in its region inventory."""
        owner, hops = self.route(start, record.ocoord)
        cell = self.cell_of(record.ocoord)
        per_cell = owner.objects.setdefault(cell, {})
        if record.oid in per_cell:
            raise AlreadyExists(record.oid)
        per_cell[record.oid] = record
        return hops + self.object_update(entry, owner)

    def object_update(self, entry: ObjectEntry, start: RegionBot) -> int:
        rcoord = self.geom.region_of(entry.ocoord)
        inv_owner, hops = self.route(start, rcoord)
        cell = self.region_cell(rcoord)
        inv = inv_owner.inventories.get(cell) or Inventory(region_rid(rcoord), rcoord)
        inv_owner.inventories[cell] = inv.upsert(entry.stripped())
        return hops

    def object_location_retrieval(self, coord: Coord, oid: str | None, start: RegionBot):
        """Route to the grid owner of ``coord``; returns (owner, record, forwards)."""
        owner, hops = self.route(start, coord)
        per_cell = owner.objects.get(self.cell_of(coord), {})
        if oid is None:
            if len(per_cell) != 1:
                raise NotFound(f"no unique object at {tuple(coord)}")
            return owner, next(iter(per_cell.values())), hops
        for rec in per_cell.values():
            if rec.oid == oid:
                return owner, rec, hops
        raise NotFound(f"object {oid} at {tuple(coord)}")

    def inventory_retrieval(self, rcoord: Coord, start: RegionBot) -> tuple[RegionBot, Inventory, int]:
        owner, hops = self.route(start, rcoord)
        inv = owner.inventories.get(self.region_cell(rcoord))
        if inv is None:
            raise NotFound(f"inventory for region {tuple(rcoord)}")
        return owner, inv, hops

    def grid_objects(self, bot: RegionBot, cell: Cell) -> dict[str, ObjectLocationRecord]:
        if not bot.owns(cell):
            raise WrongOwner(bot.address, cell)
        return bot.objects.get(cell, {})

    def cache_refresh(self, bot: RegionBot, ring: ChordRing, rng: random.Random | None = None) -> tuple[int, int]:
        """Re-resolve the addressing bot of every stored record.

        Returns (cache writes, ring messages).  Each lookup costs the request,
        the ring forwards and the reply.
        """
        writes = messages = 0
        for rec in sorted(bot.records(), key=lambda r: r.oid):
            entry = ring.random_bot(rng)
            try:
                owner, hops = ring.lookup(entry, key_of(rec.lcid, ring.bits))
            except RoutingRetry:
                messages += 1
                continue
            messages += hops + 2
            if owner.address != rec.addressing_bot:
                rec.addressing_bot = owner.address
                rec.cache_version += 1
                writes += 1
        return writes, messages

    def all_records(self) -> dict[str, ObjectLocationRecord]:
        out = {}
        for bot in self.bots.values():
            for rec in bot.records():
                if rec.oid in out:
                    raise DomainError(f"object {rec.oid} stored twice")
                out[rec.oid] = rec
        return out

"""Client-side content retrieval.

A retrieval cycle first builds the cross-region content (CRC) inventory from
the inventories of up to four regions around the client, then loads every
object listed in it.  Three strategies are available:

* ``proximity`` walks grids outwards from the client through the region
  overlay, uses the addressing bot cached by region bots, and skips objects
  whose cached copy already matches the inventory hash;
* ``basic`` resolves each listed object through the ring lookup service in
  inventory order;
* ``distance_sorted`` is ``basic`` with the list sorted by distance.

Every message is one hop and costs one cycle of latency.  A cycle runs as a
single sequential exchange, so the clock of a cycle equals its hop count.
"""
from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field, replace

from .can import Cell, NotFound as RegionNotFound, RegionBot, RouteRetry, WrongOwner, region_rid
from .chord import NotFound as MappingNotFound, RoutingRetry, key_of
from .core import Coord, GeometryParams, RegionCoord, distance
from .inventory import Inventory, ObjectEntry, diff_objects, verify_object


class RetrievalStrategy(str, enum.Enum):
    PROXIMITY = "proximity"
    BASIC = "basic"
    DISTANCE_SORTED = "distance_sorted"

    @classmethod
    def parse(cls, value: "str | RetrievalStrategy") -> "RetrievalStrategy":
        if isinstance(value, cls):
            return value
        if value == "improved":
            return cls.PROXIMITY
        return cls(value)


class ReplicaUnavailable(RuntimeError):
    pass


class IntegrityError(RuntimeError):
    pass


@dataclass
class ClientState:
    position: Coord
    velocity: float
    r_search: float
    perception_range: float
    capacity: int | None = None
    strategy: RetrievalStrategy = RetrievalStrategy.PROXIMITY
    cache: dict[str, ObjectEntry] = field(default_factory=dict)
    local_inventories: dict[RegionCoord, Inventory] = field(default_factory=dict)
    visited: set[Cell] = field(default_factory=set)
    deferred: set[str] = field(default_factory=set)
    can_entry: str | None = None
    ring_entry: str | None = None
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    @property
    def cache_size(self) -> int:
        return sum(o.size for o in self.cache.values())

    def local_ohash(self, oid: str) -> bytes | None:
        obj = self.cache.get(oid)
        return obj.ohash if obj is not None else None


@dataclass(frozen=True)
class CRCInventory:
    objects: tuple[ObjectEntry, ...]
    origin: Coord
    radius: float
    regions: tuple[RegionCoord, ...] = ()
    incomplete: bool = False

    def get(self, oid: str) -> ObjectEntry | None:
        for o in self.objects:
            if o.oid == oid:
                return o
        return None


@dataclass
class Meter:
    """Hop and latency accounting for one retrieval cycle."""

    ring: int = 0
    region: int = 0
    direct: int = 0
    transfers: int = 0
    clock: int = 0
    log: list[tuple[int, str]] = field(default_factory=list)

    def add(self, category: str, hops: int, kind: str = "") -> None:
        setattr(self, category, getattr(self, category) + hops)
        if category != "transfers":
            self.clock += hops
        if kind:
            self.log.append((hops, kind))

    @property
    def hops(self) -> int:
        return self.ring + self.region + self.direct


@dataclass
class CycleResult:
    origin: Coord
    crc: CRCInventory
    loaded: list[tuple[str, int]]
    meter: Meter
    crc_time: int
    traversal: list[tuple[str, int]] = field(default_factory=list)
    deferred: set[str] = field(default_factory=set)
    grids_visited: int = 0

    @property
    def loaded_ids(self) -> set[str]:
        return {oid for oid, _ in self.loaded}

    def perceived_delay(self, perception_range: float) -> int:
        times = dict(self.loaded)
        near = [
            o.oid for o in self.crc.objects if distance(o.ocoord, self.origin) <= perception_range
        ]
        done = [times[o] for o in near if o in times]
        return max(done, default=self.crc_time)

    @property
    def total_delay(self) -> int:
        return max((t for _, t in self.loaded), default=self.crc_time)


# -- region selection ---------------------------------------------------------


def neighbor_regions(p0: Coord, geom: GeometryParams) -> list[RegionCoord]:
    """Regions whose inventories feed the CRC inventory, own region first."""
    own = geom.region_of(p0)
    s = geom.region_side
    half = s / 2
    out = [own]
    dx = dy = None
    off_x, off_y = p0[0] - own[0], p0[1] - own[1]
    if off_x < half and own[0] - s >= 0:
        dx = -s
    elif off_x > half and own[0] + s < geom.x_map - 1e-9:
        dx = s
    if off_y < half and own[1] - s >= 0:
        dy = -s
    elif off_y > half and own[1] + s < geom.y_map - 1e-9:
        dy = s
    if dx is not None:
        out.append(Coord(own[0] + dx, own[1]))
    if dy is not None:
        out.append(Coord(own[0], own[1] + dy))
    if dx is not None and dy is not None:
        out.append(Coord(own[0] + dx, own[1] + dy))
    return out


# -- service access ------------------------------------------------------------


def _can_entry(client: ClientState, world) -> RegionBot:
    bot = world.can.bots.get(client.can_entry) if client.can_entry else None
    if bot is None:
        bot = world.can.random_bot(client.rng)
    return bot


def _ring_entry(client: ClientState, world):
    bot = world.ring.by_address.get(client.ring_entry) if client.ring_entry else None
    if bot is None:
        bot = world.ring.random_bot(client.rng)
        client.ring_entry = bot.address
    return bot


def _ring_query(client, world, meter: Meter, lcid: str):
    """Full ring lookup of ``lcid``: request, forwards and reply."""
    owner, hops = world.ring.lookup(_ring_entry(client, world), key_of(lcid, world.ring.bits))
    meter.add("ring", hops + 2, "ring-lookup")
    rec = owner.store.get(lcid)
    if rec is None:
        raise MappingNotFound(lcid)
    return rec.replicas


def construct_crc_inventory(client: ClientState, world, meter: Meter | None = None) -> CRCInventory:
    meter = meter if meter is not None else Meter()
    p0 = client.position
    merged: dict[str, ObjectEntry] = {}
    incomplete = False
    regions = neighbor_regions(p0, world.geom)
    home = None
    for rc in regions:
        entry = _can_entry(client, world)
        try:
            owner, hops = world.can.route(entry, rc)
        except RouteRetry:
            meter.add("region", 1, "route-retry")
            incomplete = True
            continue
        meter.add("region", hops + 2, "inventory")
        client.can_entry = owner.address
        home = home or owner.address
        inv = owner.inventories.get(world.can.region_cell(rc))
        if inv is None:
            continue
        for obj in inv.objects:
            merged.setdefault(obj.oid, obj)
    if home is not None:
        client.can_entry = home  # the own-region bot is the closest known contact
    kept = tuple(o for o in merged.values() if distance(o.ocoord, p0) <= client.r_search)
    return CRCInventory(kept, p0, client.r_search, tuple(regions), incomplete)


# -- loading -------------------------------------------------------------------


def _download(client, world, meter: Meter, remote: ObjectEntry, replicas) -> None:
    local = client.cache.get(remote.oid)
    plan = diff_objects(local, remote)
    lc = world.logical_computers[remote.lcid]
    payloads = None
    for replica in sorted(replicas):
        try:
            payloads = lc.fetch(replica, remote.oid, plan.stale_files)
        except ReplicaUnavailable:
            meter.add("direct", 1, "replica-miss")
            continue
        meter.add("direct", 2, "replica-fetch")
        meter.add("transfers", len(plan.stale_files))  # payloads ride on the reply
        break
    if payloads is None:
        raise ReplicaUnavailable(remote.lcid)
    groups = []
    for g in remote.file_types:
        files = []
        for f in g.files:
            if (g.type_name, f.name) in plan.stale_files:
                content = payloads[(g.type_name, f.name)]
            else:
                content = local.group(g.type_name).file(f.name).content
            files.append(replace(f, content=content))
        groups.append(replace(g, files=tuple(files)))
    fresh = replace(remote, file_types=tuple(groups))
    if verify_object(fresh):
        raise IntegrityError(remote.oid)
    client.cache[remote.oid] = fresh
    rc = world.geom.region_of(remote.ocoord)
    inv = client.local_inventories.get(rc) or Inventory(region_rid(rc), rc)
    client.local_inventories[rc] = inv.upsert(remote)


def load_content(client, world, meter: Meter, remote: ObjectEntry, record=None, bot: RegionBot | None = None) -> bool:
    """Bring the cached copy of ``remote`` up to date.

    The region reply's cached addressing bot is tried first; a wrong or
    departed addressing bot falls back to a full ring lookup.
    """
    if client.local_ohash(remote.oid) == remote.ohash:
        return True
    if record is None:
        world.can.direct(bot)
        meter.add("direct", 2, "storage-query")
        record = world.can.grid_objects(bot, world.can.cell_of(remote.ocoord))[remote.oid]
    replicas = None
    cached = world.ring.by_address.get(record.addressing_bot) if record.addressing_bot else None
    if cached is not None:
        meter.add("direct", 2, "addressing-query")
        cached.handled += 1
        if cached.owns(key_of(record.lcid, world.ring.bits)) and record.lcid in cached.store:
            replicas = cached.store[record.lcid].replicas
    elif record.addressing_bot is not None:
        meter.add("direct", 1, "addressing-departed")
    if replicas is None:
        replicas = _ring_query(client, world, meter, record.lcid)
    _download(client, world, meter, remote, replicas)
    return True


def _attempt(client, result: CycleResult, oid: str, fn, *args, **kwargs) -> bool:
    try:
        fn(*args, **kwargs)
    except (RouteRetry, RoutingRetry, RegionNotFound, MappingNotFound, ReplicaUnavailable, IntegrityError,
            WrongOwner, KeyError):
        result.deferred.add(oid)
        client.deferred.add(oid)
        return False
    client.deferred.discard(oid)
    result.loaded.append((oid, result.meter.clock))
    return True


# -- strategies ----------------------------------------------------------------


def content_retrieval_cycle(client: ClientState, world) -> CycleResult:
    meter = Meter()
    crc = construct_crc_inventory(client, world, meter)
    result = CycleResult(client.position, crc, [], meter, meter.clock)
    strategy = RetrievalStrategy.parse(client.strategy)
    if strategy is RetrievalStrategy.PROXIMITY:
        _proximity(client, world, crc, result)
    else:
        ordered = list(crc.objects)
        if strategy is RetrievalStrategy.DISTANCE_SORTED:
            ordered.sort(key=lambda o: (distance(o.ocoord, client.position), o.oid))
        for obj in ordered:
            _attempt(client, result, obj.oid, _basic_load, client, world, meter, obj)
    evict_cache(client)
    return result


def _basic_load(client, world, meter: Meter, remote: ObjectEntry) -> None:
    # every listed object is resolved on the ring; a hash match only saves the download
    replicas = _ring_query(client, world, meter, remote.lcid)
    if client.local_ohash(remote.oid) != remote.ohash:
        _download(client, world, meter, remote, replicas)


def retrieve_basic(client: ClientState, world) -> CycleResult:
    client.strategy = RetrievalStrategy.BASIC
    return content_retrieval_cycle(client, world)


def retrieve_distance_sorted(client: ClientState, world) -> CycleResult:
    client.strategy = RetrievalStrategy.DISTANCE_SORTED
    return content_retrieval_cycle(client, world)


def _proximity(client: ClientState, world, crc: CRCInventory, result: CycleResult) -> None:
    meter = result.meter
    can = world.can
    geom = world.geom
    p0 = client.position
    wanted = {o.oid: o for o in crc.objects}
    done: set[str] = set()
    answered: set[str] = set()  # bots whose reply already covered their grids in range
    client.visited = set()
    g0 = can.cell_of(p0)
    try:
        n0, hops = can.route_cell(_can_entry(client, world), g0)
        meter.add("region", hops + 2, "origin-route")
        client.can_entry = n0.address
        queue = deque([(n0.address, g0, 0)])
    except RouteRetry:
        meter.add("region", 1, "route-retry")
        queue = deque()
    while queue:
        addr, cell, depth = queue.popleft()
        if cell in client.visited:
            continue
        if distance(geom.grid_corner(*cell), p0) > client.r_search:
            continue
        client.visited.add(cell)
        bot = can.bots.get(addr)
        if bot is None or not bot.owns(cell):
            try:
                bot, hops = can.route_cell(_can_entry(client, world), cell)
            except RouteRetry:
                meter.add("region", 1, "route-retry")
                continue
            meter.add("region", hops + 2, "reroute")
        elif bot.address not in answered:
            can.direct(bot)
            meter.add("direct", 2, "grid-request")
        answered.add(bot.address)
        records = can.grid_objects(bot, cell)
        pairs = can.neighbor_query(bot, cell)
        for oid in sorted(records):
            remote = wanted.get(oid)
            if remote is None or oid in done:
                continue
            if _attempt(client, result, oid, load_content, client, world, meter, remote, None, bot):
                done.add(oid)
                result.traversal.append((oid, depth))
        for naddr, ncell in pairs:
            if ncell not in client.visited:
                queue.append((naddr, ncell, depth + 1))
    result.grids_visited = len(client.visited)
    for obj in crc.objects:
        if obj.oid in done:
            continue
        if client.local_ohash(obj.oid) == obj.ohash:
            _attempt(client, result, obj.oid, lambda: None)  # served from the local cache
            continue
        _attempt(client, result, obj.oid, _sweep_load, client, world, meter, obj)


def _sweep_load(client, world, meter: Meter, remote: ObjectEntry) -> None:
    owner, record, hops = world.can.object_location_retrieval(remote.ocoord, remote.oid, _can_entry(client, world))
    meter.add("region", hops + 2, "sweep")
    load_content(client, world, meter, remote, record=record)


# -- cache management ----------------------------------------------------------


def evict_cache(client: ClientState) -> list[str]:
    """Drop the farthest cached objects until the cache fits its byte budget.

    Objects outside the perception range go first; in-range objects are only
    evicted when the budget still cannot be met without them.
    """
    if client.capacity is None:
        return []
    evicted = []
    size = client.cache_size
    p0 = client.position
    while size > client.capacity and client.cache:
        far = [o for o in client.cache.values() if distance(o.ocoord, p0) > client.perception_range]
        pool = far or list(client.cache.values())
        victim = max(pool, key=lambda o: (distance(o.ocoord, p0), o.oid))
        del client.cache[victim.oid]
        size -= victim.size
        rc = None
        for rcoord, inv in client.local_inventories.items():
            if inv.get(victim.oid) is not None:
                rc = rcoord
                break
        if rc is not None:
            client.local_inventories[rc] = client.local_inventories[rc].remove(victim.oid)
        evicted.append(victim.oid)
    return evicted

"""Deterministic cycle-driven simulation of bots, logical computers and a client."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace

from .can import CanOverlay, ObjectLocationRecord, region_rid
from .chord import ChordRing, key_of
from .client import ClientState, CycleResult, ReplicaUnavailable, RetrievalStrategy, content_retrieval_cycle
from .config import SimConfig
from .core import Coord, DomainError, GeometryParams
from .inventory import Inventory, ObjectEntry, build_object, recompute_hashes

TRACE_VERSION = 1
FILE_TYPES = ("animation", "geometry", "script", "sound", "texture")


def stream(seed: int, name: str) -> random.Random:
    """Independent deterministic random stream per concern."""
    return random.Random(f"{seed}:{name}")


@dataclass
class LogicalComputer:
    lcid: str
    replicas: list[str]
    objects: dict[str, ObjectEntry] = field(default_factory=dict)
    _serial: int = 0

    def fetch(self, replica: str, oid: str, files) -> dict[tuple[str, str], bytes]:
        if replica not in self.replicas:
            raise ReplicaUnavailable(f"{replica} does not serve {self.lcid}")
        obj = self.objects[oid]
        out = {}
        for type_name, name in files:
            out[(type_name, name)] = obj.group(type_name).file(name).content
        return out

    def replace_replica(self, rng: random.Random) -> None:
        self._serial += 1
        gone = rng.randrange(len(self.replicas))
        self.replicas[gone] = f"{self.lcid}/r{len(self.replicas) + self._serial - 1}"


@dataclass
class TraceRecord:
    cycle: int
    actor: str
    kind: str
    hops: int
    version: int = TRACE_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {"v": self.version, "cycle": self.cycle, "actor": self.actor, "kind": self.kind, "hops": self.hops},
            sort_keys=True,
        )


@dataclass
class MetricsReport:
    retrievals: list[dict] = field(default_factory=list)
    load_samples: list[dict] = field(default_factory=list)
    events: dict[str, int] = field(default_factory=dict)
    maintenance_ring_messages: int = 0
    total_messages: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "retrievals": self.retrievals,
                "load_samples": self.load_samples,
                "events": self.events,
                "maintenance_ring_messages": self.maintenance_ring_messages,
                "total_messages": self.total_messages,
            },
            sort_keys=True,
        )

    def series(self, metric: str) -> list[float]:
        return [r[metric] for r in self.retrievals]


class World:
    """The overlays, the logical computers and the global object registry."""

    def __init__(self, config: SimConfig):
        self.config = config.validate()
        self.geom: GeometryParams = config.geometry
        seed = config.seed
        self.rng_world = stream(seed, "world")
        self.rng_churn_ring = stream(seed, "churn-ring")
        self.rng_churn_can = stream(seed, "churn-can")
        self.rng_replica = stream(seed, "replica")
        self.rng_maint = stream(seed, "maintenance")
        self.ring = ChordRing(config.chord_bits, stream(seed, "ring-ids"))
        self.can = CanOverlay(self.geom, stream(seed, "can-joins"))
        self.logical_computers: dict[str, LogicalComputer] = {}
        self.registry: dict[str, ObjectEntry] = {}
        self.events = {"ring_join": 0, "ring_leave": 0, "can_join": 0, "can_leave": 0, "replica_change": 0}
        self.trace: list[TraceRecord] | None = None

    # -- construction ------------------------------------------------------

    def build(self) -> "World":
        cfg = self.config
        for _ in range(cfg.addressing_bots):
            self.ring.join()
        self.ring.stabilize_all()
        self.can.bootstrap()
        for _ in range(cfg.region_bots - 1):
            self.can.join()
        for rc in self.geom.regions():
            self.can.inventory_create(Inventory(region_rid(rc), rc), self.can.random_bot(self.rng_maint))
        n_lc = math.ceil(cfg.objects / cfg.objects_per_lc) if cfg.objects else 0
        for i in range(n_lc):
            self.add_logical_computer(f"LC-{i:04d}")
        lcids = sorted(self.logical_computers)
        for i in range(cfg.objects):
            p = Coord(self.rng_world.uniform(0, self.geom.x_map), self.rng_world.uniform(0, self.geom.y_map))
            if not self.geom.contains(p):
                p = Coord(min(p.x, math.nextafter(self.geom.x_map, 0)), min(p.y, math.nextafter(self.geom.y_map, 0)))
            self.add_object(self.make_object(f"OBJ-{i:05d}", p, lcids[i % len(lcids)]))
        self.reset_load()
        return self

    def add_logical_computer(self, lcid: str) -> LogicalComputer:
        lc = LogicalComputer(lcid, [f"{lcid}/r{j}" for j in range(self.config.replicas)])
        self.logical_computers[lcid] = lc
        self.ring.mapping_create(lcid, lc.replicas, self.ring.random_bot(self.rng_maint))
        return lc

    def make_object(self, oid: str, p: Coord, lcid: str) -> ObjectEntry:
        rng = self.rng_world
        size = self.config.payload_size
        files = {}
        for type_name in sorted(rng.sample(FILE_TYPES, rng.randint(1, 3))):
            files[type_name] = [
                (rng.randbytes(size), {"Name": f"{type_name}-{j}.bin", "Author": lcid, "Version": "1"})
                for j in range(rng.randint(1, 3))
            ]
        props = {"Name": f"Object {oid}", "Author": lcid, "Version": "1"}
        return build_object(oid, p, lcid, props, files)

    def add_object(self, obj: ObjectEntry, start=None) -> None:
        owner, _ = self.ring.lookup(self.ring.random_bot(self.rng_maint), key_of(obj.lcid, self.ring.bits),
                                    count_load=False)
        record = ObjectLocationRecord(obj.oid, obj.ocoord, obj.lcid, owner.address)
        self.logical_computers[obj.lcid].objects[obj.oid] = obj
        self.registry[obj.oid] = obj
        self.can.object_create(record, obj.stripped(), start or self.can.random_bot(self.rng_maint))

    def mutate_file(self, oid: str, type_name: str | None = None, file_name: str | None = None) -> ObjectEntry:
        """Rewrite one file's payload and publish the new hashes."""
        obj = self.registry[oid]
        group = obj.group(type_name) if type_name else obj.file_types[0]
        target = group.file(file_name) if file_name else group.files[0]
        new_content = bytes(b ^ 0xFF for b in target.content[:1]) + target.content[1:] + b"*"
        groups = []
        for g in obj.file_types:
            if g is group:
                g = replace(g, files=tuple(replace(f, content=new_content) if f is target else f for f in g.files))
            groups.append(g)
        fresh = recompute_hashes(replace(obj, file_types=tuple(groups)))
        self.logical_computers[obj.lcid].objects[oid] = fresh
        self.registry[oid] = fresh
        self.can.object_update(fresh.stripped(), self.can.random_bot(self.rng_maint))
        return fresh

    def reset_load(self) -> None:
        for bot in self.can.bots.values():
            bot.handled = bot.forwarded = 0
        for bot in self.ring.live_bots():
            bot.handled = bot.forwarded = 0
        self.can.messages_received = 0
        self.can.departed_load = 0

    # -- dynamics ----------------------------------------------------------

    def churn_step(self, cycle: int) -> None:
        """One dynamics round: independent join and leave draws per overlay."""
        cfg = self.config
        rng = self.rng_churn_ring
        if rng.random() < cfg.p_join:
            self.ring.join()
            self.events["ring_join"] += 1
            self._trace(cycle, "ring", "join")
        if rng.random() < cfg.p_leave and len(self.ring) > 1:
            self.ring.leave(rng.choice(self.ring.ids))
            self.events["ring_leave"] += 1
            self._trace(cycle, "ring", "leave")
        rng = self.rng_churn_can
        if rng.random() < cfg.p_join:
            try:
                self.can.join()
                self.events["can_join"] += 1
                self._trace(cycle, "can", "join")
            except DomainError:
                pass
        if rng.random() < cfg.p_leave and len(self.can) > 1:
            self.can.leave(rng.choice(sorted(self.can.bots)))
            self.events["can_leave"] += 1
            self._trace(cycle, "can", "leave")
        rng = self.rng_replica
        if self.logical_computers and rng.random() < cfg.p_join:
            lc = self.logical_computers[rng.choice(sorted(self.logical_computers))]
            lc.replace_replica(rng)
            self.ring.mapping_update(lc.lcid, lc.replicas, self.ring.random_bot(self.rng_maint))
            self.events["replica_change"] += 1
            self._trace(cycle, lc.lcid, "replica-change")

    def cache_refresh(self) -> int:
        messages = 0
        for address in sorted(self.can.bots):
            _, sent = self.can.cache_refresh(self.can.bots[address], self.ring, self.rng_maint)
            messages += sent
        return messages

    def consistency_violations(self) -> list[str]:
        out = []
        stored = self.can.all_records()
        if set(stored) != set(self.registry):
            out.append(f"region stores hold {len(stored)} objects, registry {len(self.registry)}")
        out.extend(self.can.tiling_violations())
        for bot in self.can.bots.values():
            for cell in bot.objects:
                if not bot.owns(cell):
                    out.append(f"{bot.address} stores grid {cell} outside its zone")
        return out

    def _trace(self, cycle: int, actor: str, kind: str, hops: int = 0) -> None:
        if self.trace is not None:
            self.trace.append(TraceRecord(cycle, actor, kind, hops))


def random_walk_step(position: Coord, v: float, rng: random.Random, geom: GeometryParams) -> Coord:
    """Move ``v`` in a uniform random heading, reflecting off the map edges."""
    heading = rng.uniform(0, 2 * math.pi)
    x = _reflect(position[0] + v * math.cos(heading), geom.x_map)
    y = _reflect(position[1] + v * math.sin(heading), geom.y_map)
    return Coord(x, y)


def _reflect(value: float, extent: float) -> float:
    period = 2 * extent
    value = math.fmod(value, period)
    if value < 0:
        value += period
    if value >= extent:
        value = period - value
    if value >= extent:
        value = math.nextafter(extent, 0)
    return value


class Simulation:
    def __init__(self, config: SimConfig, world: World | None = None, trace: bool = False):
        self.config = config.validate()
        self.world = world or World(config).build()
        if trace:
            self.world.trace = []
        seed = config.seed
        self.rng_walk = stream(seed, "walk")
        geom = self.world.geom
        start = Coord(stream(seed, "start").uniform(0, geom.x_map), stream(seed, "start-y").uniform(0, geom.y_map))
        self.client = ClientState(
            position=start,
            velocity=config.v,
            r_search=config.search_range,
            perception_range=config.perception,
            capacity=config.cache_capacity,
            strategy=RetrievalStrategy.parse(config.strategy),
            rng=stream(seed, "client"),
        )
        self.report = MetricsReport()
        self._window_start: dict[str, int] = {}
        self._departed_mark = 0
        self.cycle = 0

    def event_bound(self) -> int:
        geom = self.world.geom
        return 10 * geom.grid_cols * geom.grid_rows * (len(self.world.can) + len(self.world.ring))

    def retrieval(self) -> CycleResult:
        result = content_retrieval_cycle(self.client, self.world)
        if result.meter.hops > self.event_bound():
            raise RuntimeError("retrieval cycle exceeded its event bound")
        m = result.meter
        self.report.retrievals.append(
            {
                "cycle": self.cycle,
                "hops": m.hops,
                "hops_ring": m.ring,
                "hops_region": m.region,
                "hops_direct": m.direct,
                "transfers": m.transfers,
                "crc_objects": len(result.crc.objects),
                "loaded": len(result.loaded),
                "deferred": len(result.deferred),
                "retrieval_delay": result.total_delay,
                "perceived_delay": result.perceived_delay(self.client.perception_range),
            }
        )
        self.report.total_messages += m.hops
        self.world._trace(self.cycle, "client", "retrieval", m.hops)
        return result

    def sample_load(self) -> dict:
        can = self.world.can
        per_bot = {}
        for address in sorted(can.bots):
            bot = can.bots[address]
            per_bot[address] = bot.load - self._window_start.get(address, 0)
        # bots that left mid-window only contribute what they received since the window opened
        gone_before = sum(v for a, v in self._window_start.items() if a not in can.bots)
        departed = can.departed_load - self._departed_mark - gone_before
        total = sum(per_bot.values()) + departed
        sample = {
            "cycle": self.cycle,
            "total": total,
            "departed": departed,
            "mean": total / max(1, len(per_bot)),
            "max": max(per_bot.values(), default=0),
        }
        self._window_start = {a: b.load for a, b in can.bots.items()}
        self._departed_mark = can.departed_load
        self.report.load_samples.append(sample)
        return sample

    def step(self) -> None:
        cfg = self.config
        self.cycle += 1
        c = self.cycle
        if cfg.dynamics and c % cfg.dynamics_period == 0:
            self.world.churn_step(c)
        if cfg.v > 0:
            self.client.position = random_walk_step(self.client.position, cfg.v, self.rng_walk, self.world.geom)
        if (c - 1) % cfg.period == 0:
            self.retrieval()
        if c % cfg.cache_refresh_period == 0:
            sent = self.world.cache_refresh()
            self.report.maintenance_ring_messages += sent
            self.report.total_messages += sent
        if c % cfg.stabilization_period == 0:
            self.world.ring.stabilize()
        if c % cfg.sample_window == 0:
            self.sample_load()
        if cfg.check_invariants:
            problems = self.world.consistency_violations()
            if problems:
                raise AssertionError(f"cycle {c}: {problems[:3]}")

    def run(self) -> MetricsReport:
        while self.cycle < self.config.cycles:
            self.step()
        self.report.events = dict(self.world.events)
        return self.report


def run(config: SimConfig) -> MetricsReport:
    return Simulation(config).run()

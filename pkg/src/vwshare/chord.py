"""Ring overlay of addressing bots serving the object resource lookup service.

Each bot owns the keys in ``[own id, successor id)``.  Lookups forward greedily
through finger tables; entry ``i`` of a bot's finger table is the first live
bot whose clockwise distance lies in ``[2**i, 2**(i+1))``.
"""
from __future__ import annotations

import bisect
import hashlib
import random
from dataclasses import dataclass, field

from .core import DomainError, NodeAddress


class RoutingRetry(RuntimeError):
    """Routing hit a dead end; retry once stabilization has run."""


class NotFound(KeyError):
    pass


class AlreadyExists(KeyError):
    pass


def key_of(lcid: str, bits: int = 32) -> int:
    if not lcid:
        raise DomainError("LCID must be non-empty")
    digest = hashlib.sha256(lcid.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") >> (256 - bits)


def clockwise(a: int, b: int, bits: int) -> int:
    return (b - a) % (1 << bits)


@dataclass
class MappingRecord:
    lcid: str
    replicas: frozenset[NodeAddress]
    version: int = 1


@dataclass
class AddressingBot:
    node_id: int
    address: NodeAddress
    bits: int
    successor: int = 0
    predecessor: int = 0
    fingers: list[int | None] = field(default_factory=list)
    store: dict[str, MappingRecord] = field(default_factory=dict)
    alive: bool = True
    handled: int = 0
    forwarded: int = 0

    def owns(self, key: int) -> bool:
        if self.successor == self.node_id:
            return True
        return clockwise(self.node_id, key, self.bits) < clockwise(self.node_id, self.successor, self.bits)


class ChordRing:
    def __init__(self, bits: int = 32, rng: random.Random | None = None):
        if bits < 8:
            raise DomainError("ring needs at least 8 id bits")
        self.bits = bits
        self.rng = rng or random.Random(0)
        self.bots: dict[int, AddressingBot] = {}
        self.by_address: dict[NodeAddress, AddressingBot] = {}
        self._ids: list[int] = []
        self._serial = 0
        self._finger_cursor = 0

    # -- membership --------------------------------------------------------

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[int]:
        return list(self._ids)

    def live_bots(self) -> list[AddressingBot]:
        return [self.bots[i] for i in self._ids]

    def fresh_id(self) -> int:
        while True:
            nid = self.rng.getrandbits(self.bits)
            if nid not in self.bots:
                return nid

    def _successor_of_point(self, point: int) -> int:
        """First live id at or clockwise after ``point``."""
        i = bisect.bisect_left(self._ids, point)
        return self._ids[i % len(self._ids)]

    def owner_id(self, key: int) -> int:
        """Live id whose segment holds ``key`` (largest id <= key, wrapping)."""
        i = bisect.bisect_right(self._ids, key) - 1
        return self._ids[i]

    def _wire(self, nid: int) -> None:
        i = self._ids.index(nid)
        bot = self.bots[nid]
        bot.successor = self._ids[(i + 1) % len(self._ids)]
        bot.predecessor = self._ids[i - 1]

    def join(self, node_id: int | None = None, address: NodeAddress | None = None) -> AddressingBot:
        """Insert a bot, hand it its key segment and build its own fingers."""
        if node_id is None:
            node_id = self.fresh_id()
        if node_id in self.bots and self.bots[node_id].alive:
            raise DomainError(f"id {node_id} already on the ring")
        if not 0 <= node_id < (1 << self.bits):
            raise DomainError("id outside key space")
        if address is None:
            address = f"ab{self._serial:05d}"
        self._serial += 1
        bot = AddressingBot(node_id, address, self.bits)
        previous_owner = self.owner_id(node_id) if self._ids else None
        bisect.insort(self._ids, node_id)
        self.bots[node_id] = bot
        self.by_address[address] = bot
        for nid in {node_id, *self._neighbours(node_id)}:
            self._wire(nid)
        if previous_owner is not None:
            donor = self.bots[previous_owner]
            for lcid in [l for l, rec in donor.store.items() if bot.owns(key_of(l, self.bits))]:
                bot.store[lcid] = donor.store.pop(lcid)
        self.rebuild_fingers(bot)
        return bot

    def _neighbours(self, nid: int) -> tuple[int, int]:
        i = self._ids.index(nid)
        return self._ids[i - 1], self._ids[(i + 1) % len(self._ids)]

    def leave(self, node_id: int) -> None:
        """Graceful departure: the predecessor absorbs the segment and its keys."""
        bot = self.bots.get(node_id)
        if bot is None or not bot.alive:
            raise DomainError(f"bot {node_id} is not live")
        if len(self._ids) == 1:
            raise DomainError("cannot remove the last bot")
        pred, succ = self._neighbours(node_id)
        self.bots[pred].store.update(bot.store)
        bot.store.clear()
        self._ids.remove(node_id)
        bot.alive = False
        del self.bots[node_id]
        self.by_address.pop(bot.address, None)
        self._wire(pred)
        self._wire(succ)

    def is_live(self, address: NodeAddress) -> bool:
        return address in self.by_address

    # -- maintenance -------------------------------------------------------

    def finger_target(self, bot: AddressingBot, i: int) -> int | None:
        start = (bot.node_id + (1 << i)) % (1 << self.bits)
        cand = self._successor_of_point(start)
        d = clockwise(bot.node_id, cand, self.bits)
        return cand if (1 << i) <= d < (1 << (i + 1)) else None

    def rebuild_fingers(self, bot: AddressingBot) -> None:
        bot.fingers = [self.finger_target(bot, i) for i in range(self.bits)]

    def stabilize(self) -> None:
        """One maintenance round: fix ring pointers and one finger level per bot."""
        level = self._finger_cursor % self.bits
        self._finger_cursor += 1
        ids = self._ids
        for i, nid in enumerate(ids):
            bot = self.bots[nid]
            bot.successor = ids[(i + 1) % len(ids)]
            bot.predecessor = ids[i - 1]
            if len(bot.fingers) != self.bits:
                self.rebuild_fingers(bot)
            else:
                bot.fingers[level] = self.finger_target(bot, level)

    def stabilize_all(self) -> None:
        for nid in self._ids:
            self._wire(nid)
            self.rebuild_fingers(self.bots[nid])

    # -- routing -----------------------------------------------------------

    def lookup(self, start: AddressingBot | int, key: int, count_load: bool = True) -> tuple[AddressingBot, int]:
        """Route ``key`` from ``start``; returns the owner and the number of forwards."""
        cur = self.bots[start if isinstance(start, int) else start.node_id]
        hops = 0
        limit = 4 * len(self._ids) + self.bits
        while not cur.owns(key):
            target = clockwise(cur.node_id, key, self.bits)
            best, best_progress = None, 0
            for nid in [cur.successor, *cur.fingers]:
                if nid is None or nid not in self.bots:
                    continue
                progress = clockwise(cur.node_id, nid, self.bits)
                if progress <= target and (
                    progress > best_progress or (progress == best_progress and best is not None and nid < best)
                ):
                    best, best_progress = nid, progress
            if best is None or hops > limit:
                raise RoutingRetry(f"no progress from {cur.node_id} towards {key}")
            if count_load:
                cur.forwarded += 1
            cur = self.bots[best]
            hops += 1
        if count_load:
            cur.handled += 1
        return cur, hops

    def random_bot(self, rng: random.Random | None = None) -> AddressingBot:
        rng = rng or self.rng
        return self.bots[rng.choice(self._ids)]

    # -- mapping service ---------------------------------------------------

    def _route(self, lcid: str, start: AddressingBot | None) -> tuple[AddressingBot, int]:
        start = start or self.random_bot()
        return self.lookup(start, key_of(lcid, self.bits))

    def mapping_create(self, lcid: str, replicas, start: AddressingBot | None = None) -> int:
        owner, hops = self._route(lcid, start)
        if lcid in owner.store:
            raise AlreadyExists(lcid)
        if not replicas:
            raise DomainError("mapping needs at least one replica")
        owner.store[lcid] = MappingRecord(lcid, frozenset(replicas))
        return hops

    def mapping_update(self, lcid: str, replicas, start: AddressingBot | None = None) -> int:
        owner, hops = self._route(lcid, start)
        rec = owner.store.get(lcid)
        if rec is None:
            raise NotFound(lcid)
        if not replicas:
            raise DomainError("mapping needs at least one replica")
        rec.replicas = frozenset(replicas)
        rec.version += 1
        return hops

    def mapping_query(self, lcid: str, start: AddressingBot | None = None) -> tuple[MappingRecord, int]:
        owner, hops = self._route(lcid, start)
        rec = owner.store.get(lcid)
        if rec is None:
            raise NotFound(lcid)
        return rec, hops

    def all_records(self) -> dict[str, MappingRecord]:
        out = {}
        for bot in self.live_bots():
            out.update(bot.store)
        return out

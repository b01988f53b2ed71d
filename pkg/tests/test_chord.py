import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from vwshare.chord import AlreadyExists, ChordRing, NotFound, clockwise, key_of
from vwshare.core import DomainError


def lcid_with_key(key, bits=8):
    i = 0
    while key_of(f"LC-{i}", bits) != key:
        i += 1
    return f"LC-{i}"


def ring_of(ids, bits=8):
    ring = ChordRing(bits, random.Random(1))
    for nid in ids:
        ring.join(nid)
    ring.stabilize_all()
    return ring


def scan_owner(ids, key):
    # brute force: largest id <= key, else the largest id overall (wraparound)
    below = [i for i in ids if i <= key]
    return max(below) if below else max(ids)


def test_key_of_properties():
    assert key_of("LC-1") == key_of("LC-1")
    assert all(0 <= key_of(f"x{i}", 8) < 256 for i in range(500))
    with pytest.raises(DomainError):
        key_of("")


def test_key_collisions_within_birthday_bound():
    keys = [key_of(f"logical-computer-{i}") for i in range(10_000)]
    assert len(keys) - len(set(keys)) < 5


@pytest.mark.parametrize("key, owner", [(60, 50), (5, 200), (10, 10), (255, 200), (199, 50)])
def test_lookup_small_ring(key, owner):
    ring = ring_of([10, 50, 200])
    for start in ring.ids:
        found, _ = ring.lookup(start, key)
        assert found.node_id == owner == scan_owner([10, 50, 200], key)


def test_single_bot_lookup():
    ring = ring_of([77])
    owner, hops = ring.lookup(77, 3)
    assert owner.node_id == 77 and hops == 0


def test_join_hands_over_keys():
    ring = ring_of([10, 200])
    k60, k100 = lcid_with_key(60), lcid_with_key(100)
    for lcid in (k60, k100):
        ring.mapping_create(lcid, {"A"})
    assert set(ring.bots[10].store) == {k60, k100}
    before = {i: dict(b.store) for i, b in ring.bots.items()}
    ring.join(50)
    assert set(ring.bots[50].store) == {k60, k100}
    assert ring.bots[10].store == {}
    ring.leave(50)
    assert set(ring.bots[10].store) == {k60, k100}
    assert {i: b.store for i, b in ring.bots.items()} == before


def test_join_rejects_duplicates_and_last_leave():
    ring = ring_of([10])
    with pytest.raises(DomainError):
        ring.join(10)
    with pytest.raises(DomainError):
        ring.leave(10)
    with pytest.raises(DomainError):
        ring.join(256)


def test_mapping_service():
    ring = ring_of([10, 50, 200])
    ring.mapping_create("LC-1", {"A", "B", "C"})
    rec, _ = ring.mapping_query("LC-1")
    assert rec.replicas == {"A", "B", "C"} and rec.version == 1
    ring.mapping_update("LC-1", {"A", "B", "D"})
    rec, _ = ring.mapping_query("LC-1")
    assert rec.replicas == {"A", "B", "D"} and rec.version == 2
    with pytest.raises(NotFound):
        ring.mapping_query("LC-unknown")
    with pytest.raises(AlreadyExists):
        ring.mapping_create("LC-1", {"A"})
    with pytest.raises(NotFound):
        ring.mapping_update("LC-2", {"A"})


def test_finger_ranges():
    ring = ChordRing(16, random.Random(3))
    for _ in range(60):
        ring.join()
    ring.stabilize_all()
    for bot in ring.live_bots():
        for i, f in enumerate(bot.fingers):
            if f is not None:
                assert 2**i <= clockwise(bot.node_id, f, 16) < 2 ** (i + 1)


@settings(max_examples=25, deadline=None)
@given(st.sets(st.integers(0, 255), min_size=1, max_size=40))
def test_segments_partition_key_space(ids):
    ring = ring_of(sorted(ids))
    for key in range(256):
        owners = [b.node_id for b in ring.live_bots() if b.owns(key)]
        assert owners == [scan_owner(ids, key)]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_mappings_survive_graceful_churn(seed):
    rng = random.Random(seed)
    ring = ChordRing(16, random.Random(seed))
    for _ in range(20):
        ring.join()
    ring.stabilize_all()
    created = {f"LC-{i}": {f"r{i}"} for i in range(30)}
    for lcid, replicas in created.items():
        ring.mapping_create(lcid, replicas)
    for _ in range(40):
        if rng.random() < 0.5 or len(ring) < 3:
            ring.join()
        else:
            ring.leave(rng.choice(ring.ids))
        ring.stabilize()
    ring.stabilize_all()
    for lcid, replicas in created.items():
        assert ring.mapping_query(lcid)[0].replicas == replicas


def test_lookups_agree_with_scan_and_stay_logarithmic():
    rng = random.Random(11)
    for n in (50, 100, 200):
        ring = ChordRing(32, random.Random(n))
        for _ in range(n):
            ring.join()
        ring.stabilize_all()
        total = 0
        for _ in range(1000):
            key = rng.getrandbits(32)
            owner, hops = ring.lookup(ring.random_bot(rng), key)
            assert owner.node_id == scan_owner(ring.ids, key)
            total += hops
        assert total / 1000 <= 1.5 * math.log2(n)


def test_stabilize_repairs_fingers_after_churn():
    ring = ChordRing(16, random.Random(4))
    for _ in range(30):
        ring.join()
    ring.stabilize_all()
    for nid in ring.ids[:5]:
        ring.leave(nid)
    for _ in range(16):
        ring.stabilize()
    for bot in ring.live_bots():
        assert bot.fingers == [ring.finger_target(bot, i) for i in range(16)]

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``VERDICTS`` and echoed again in the terminal
summary (see ``conftest.py``) so they appear in plain ``pytest -v`` output.
"""
import json
import math
import random
import statistics
import time
from dataclasses import replace
from pathlib import Path

import pytest

from vwshare.can import CanOverlay
from vwshare.chord import ChordRing
from vwshare.cli import main
from vwshare.client import content_retrieval_cycle, neighbor_regions
from vwshare.config import SimConfig
from vwshare.core import Coord, GeometryParams, distance
from vwshare.engine import Simulation
from vwshare.inventory import (
    build_object,
    locate_corruption,
    parse_inventory,
    parse_object,
    serialize_inventory,
    serialize_object,
)
from vwshare.scenarios import SWEEP_K, run_scenario, scenario, summarize

from conftest import build_world, make_client

VERDICTS: dict[int, str] = {}
FIXTURES = Path(__file__).parent / "fixtures"
BASE = SimConfig()  # default experiment parameters
SEEDS = 5


def verdict(number, ok, detail, capsys):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[number] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def scan_owner(ids, key):
    below = [i for i in ids if i <= key]
    return max(below) if below else max(ids)


def in_radius(world, p):
    regions = set(neighbor_regions(p, world.geom))
    r = world.geom.search_radius
    return {oid for oid, o in world.registry.items()
            if world.geom.region_of(o.ocoord) in regions and distance(o.ocoord, p) <= r}


def point_means(rows):
    """{(strategy, dynamics, k, metric): mean over seeds of per-run means}"""
    return {(s, d, int(k), m): mean for _, s, d, k, m, _, mean, _ in summarize(rows)}


# -- criterion 1 ---------------------------------------------------------------


def test_criterion_1_overlay_oracles(capsys):
    started = time.perf_counter()
    rng = random.Random(2024)
    ring = ChordRing(32, random.Random(1))
    for _ in range(100):
        ring.join()
    ring.stabilize_all()
    ring_bad = 0
    for _ in range(1000):
        key = rng.getrandbits(32)
        owner, _ = ring.lookup(ring.random_bot(rng), key)
        ring_bad += owner.node_id != scan_owner(ring.ids, key)
    geom = GeometryParams()
    can = CanOverlay(geom, random.Random(1))
    can.bootstrap()
    for _ in range(99):
        can.join()
    can_bad = 0
    for _ in range(500):
        p = Coord(rng.uniform(0, geom.x_map), rng.uniform(0, geom.y_map))
        owner, _ = can.route(can.random_bot(rng), p)
        can_bad += owner is not can.owner_by_scan(can.cell_of(p))
    elapsed = time.perf_counter() - started
    ok = ring_bad == 0 and can_bad == 0 and elapsed < 10
    verdict(1, ok, f"chord mismatches {ring_bad}/1000, CAN mismatches {can_bad}/500, {elapsed:.2f}s", capsys)


# -- criterion 2 ---------------------------------------------------------------


def test_criterion_2_complexity_envelopes(capsys):
    parts, ok = [], True
    for n in (50, 100, 200):
        hops = []
        for seed in range(SEEDS):
            rng = random.Random(seed)
            ring = ChordRing(32, random.Random(1000 * n + seed))
            for _ in range(n):
                ring.join()
            ring.stabilize_all()
            hops += [ring.lookup(ring.random_bot(rng), rng.getrandbits(32))[1] for _ in range(1000)]
        mean, bound = statistics.fmean(hops), 1.5 * math.log2(n)
        ok &= mean <= bound
        parts.append(f"chord n={n} {mean:.2f}<={bound:.2f}")
    geom = GeometryParams()
    for n in (25, 100):
        hops = []
        for seed in range(SEEDS):
            rng = random.Random(seed)
            can = CanOverlay(geom, random.Random(1000 * n + seed))
            can.bootstrap()
            for _ in range(n - 1):
                can.join()
            for _ in range(500):
                p = Coord(rng.uniform(0, geom.x_map), rng.uniform(0, geom.y_map))
                hops.append(can.route(can.random_bot(rng), p)[1])
        mean, bound = statistics.fmean(hops), 2 * math.sqrt(n)
        ok &= mean <= bound
        parts.append(f"can n={n} {mean:.2f}<={bound:.2f}")
    verdict(2, ok, ", ".join(parts), capsys)


# -- criterion 3 ---------------------------------------------------------------


def test_criterion_3_merkle_localization(capsys):
    failures, worst = 0, 0
    for trial in range(1000):
        rng = random.Random(trial)
        files = {
            f"type{t}": [(rng.randbytes(32), {"Name": f"f{i}", "Author": "a"}) for i in range(8)]
            for t in range(8)
        }
        obj = build_object(f"o{trial}", Coord(1, 1), "LC", {"Name": "n"}, files)
        g = rng.choice(obj.file_types)
        f = rng.choice(g.files)
        groups = tuple(
            replace(x, files=tuple(replace(y, content=y.content + b"!") if y is f else y for y in x.files))
            for x in obj.file_types
        )
        found, visits = locate_corruption(replace(obj, file_types=groups))
        worst = max(worst, visits)
        failures += found != [f"types/{g.type_name}/files/{f.name}"] or visits > 17
    verdict(3, failures == 0, f"failures {failures}/1000, max visits {worst} (bound 17)", capsys)


# -- criterion 4 ---------------------------------------------------------------


def test_criterion_4_retrieval_completeness(capsys):
    mismatches, cycles = 0, 0
    for placement in range(100):
        sim = Simulation(SimConfig(objects=100, seed=placement, cycles=40, dynamics=False))
        results = []
        original = sim.retrieval
        sim.retrieval = lambda: results.append(original())
        sim.run()
        for res in results:
            cycles += 1
            mismatches += res.loaded_ids != in_radius(sim.world, res.origin)
    verdict(4, mismatches == 0, f"mismatches {mismatches} over {cycles} cycles (100 placements x 100 objects)",
            capsys)


# -- criterion 5 ---------------------------------------------------------------


def test_criterion_5_redundancy_elimination(capsys):
    bad, checked = [], 0
    for placement in range(20):
        rng = random.Random(placement)
        pts = [(rng.uniform(0, 1500), rng.uniform(0, 1200)) for _ in range(100)]
        for strategy in ("proximity", "basic", "distance_sorted"):
            world = build_world(pts, seed=placement)
            client = make_client(world, (rng.uniform(0, 1500), rng.uniform(0, 1200)), strategy)
            first = content_retrieval_cycle(client, world)
            second = content_retrieval_cycle(client, world)
            if not first.loaded:
                continue
            world.mutate_file(sorted(first.loaded_ids)[rng.randrange(len(first.loaded))])
            third = content_retrieval_cycle(client, world)
            checked += 1
            if (second.meter.transfers, third.meter.transfers) != (0, 1):
                bad.append((placement, strategy, second.meter.transfers, third.meter.transfers))
    verdict(5, not bad and checked > 0, f"{checked} checks, deviations {bad[:3]}", capsys)


# -- criteria 6 and 7: strategy sweeps ------------------------------------------


@pytest.fixture(scope="module")
def overhead_sweep():
    started = time.perf_counter()
    rows = run_scenario(scenario("overhead", BASE), BASE, reps=SEEDS, seed=BASE.seed)
    return point_means(rows), time.perf_counter() - started


@pytest.fixture(scope="module")
def delay_sweep():
    rows = run_scenario(scenario("delay", BASE), BASE, reps=SEEDS, seed=BASE.seed)
    return point_means(rows)


def test_criterion_6_overhead_trend(overhead_sweep, capsys):
    means, elapsed = overhead_sweep
    ok, parts = elapsed < 300, []
    for dyn in ("off", "on"):
        imp = [means[("improved", dyn, k, "hops")] for k in SWEEP_K]
        bas = [means[("basic", dyn, k, "hops")] for k in SWEEP_K]
        ok &= all(a < b for a, b in zip(imp, bas))
        s_imp = statistics.linear_regression(SWEEP_K, imp).slope
        s_bas = statistics.linear_regression(SWEEP_K, bas).slope
        ok &= s_imp < s_bas
        parts.append(f"dyn {dyn}: improved {[round(v, 1) for v in imp]} vs basic {[round(v, 1) for v in bas]}, "
                     f"slopes {s_imp:.3f}<{s_bas:.3f}")
    verdict(6, ok, "; ".join(parts) + f"; {elapsed:.0f}s", capsys)


def test_criterion_7_perceived_delay_trend(delay_sweep, capsys):
    means = delay_sweep
    ok, parts = True, []
    for dyn in ("off", "on"):
        for k in SWEEP_K:
            prox = means[("improved", dyn, k, "perceived_delay")]
            basic = means[("basic", dyn, k, "perceived_delay")]
            dsort = means[("distance_sorted", dyn, k, "perceived_delay")]
            rel = (prox - dsort) / dsort
            ok &= prox < basic and abs(rel) <= 0.15
            parts.append(f"{dyn} k={k}: {prox:.1f}/{basic:.1f}/{dsort:.1f} ({rel:+.0%})")
    verdict(7, ok, "proximity/basic/distance_sorted " + ", ".join(parts), capsys)


# -- criterion 8 ---------------------------------------------------------------


def test_criterion_8_load_trend(capsys):
    series, parts, ok = {}, [], True
    for dyn in (False, True):
        scn = scenario("load", BASE, dynamics=dyn)
        rows = run_scenario(scn, BASE, reps=3, seed=BASE.seed)
        per_seed: dict[int, list[float]] = {}
        for _, _, _, _, seed, _, metric, value in rows:
            if metric == "mean":
                per_seed.setdefault(seed, []).append(value)
        runs = [per_seed[s] for s in sorted(per_seed)]
        assert all(len(r) == 100 for r in runs)
        avg = [statistics.fmean(col) for col in zip(*runs)]
        series[dyn] = avg
        first, last = statistics.fmean(avg[:10]), statistics.fmean(avg[-10:])
        ok &= first > last
        seeds = " ".join(f"{statistics.fmean(r[:10]):.2f}/{statistics.fmean(r[-10:]):.2f}" for r in runs)
        parts.append(f"dyn {'on' if dyn else 'off'}: first10 {first:.2f} last10 {last:.2f} (per seed {seeds})")
    corr = statistics.correlation(series[False], series[True])
    ok &= corr > 0.7
    verdict(8, ok, "; ".join(parts) + f"; correlation {corr:.2f}", capsys)


# -- criterion 9 ---------------------------------------------------------------


def test_criterion_9_determinism(tmp_path, capsys):
    differing = []
    for name, extra in (("overhead", ["--cycles", "100"]), ("delay", ["--cycles", "100"]),
                        ("load", ["--cycles", "2000"]), ("custom", ["--cycles", "200", "--dynamics", "on"])):
        outputs = []
        for attempt in range(2):
            out = tmp_path / f"{name}-{attempt}.csv"
            assert main(["run", "--scenario", name, "--reps", "2", "--seed", "7", "--out", str(out), *extra]) == 0
            outputs.append((out.read_bytes(), out.with_name(out.stem + "_summary.csv").read_bytes()))
        if outputs[0] != outputs[1]:
            differing.append(name)
    verdict(9, not differing, f"scenarios with differing bytes: {differing or 'none'}", capsys)


# -- criterion 10 --------------------------------------------------------------


def test_criterion_10_wire_format(capsys):
    obj_text = (FIXTURES / "object_record.json").read_text()
    inv_text = (FIXTURES / "region_inventory.json").read_text()
    obj_raw, inv_raw = json.loads(obj_text), json.loads(inv_text)
    checks = {
        "object round trip": serialize_object(parse_object(obj_text)) == obj_text,
        "inventory round trip": serialize_inventory(parse_inventory(inv_text)) == inv_text,
        "object fields": list(obj_raw) == ["OID", "OHash", "OCoord", "LCID", "OProperties", "FileType"],
        "inventory fields": list(inv_raw) == ["RID", "RCoord", "Object"],
        "property fields": list(obj_raw["OProperties"])[0] == "PHash",
        "file type fields": list(obj_raw["FileType"][0]) == ["Type", "FTHash", "Files"],
        "file fields": list(obj_raw["FileType"][0]["Files"][0]) == ["FHash", "FProperties"],
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, f"failed checks: {failed or 'none'}", capsys)

"""Experiment sweeps and their CSV outputs."""
from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ConfigError, SimConfig
from .engine import run

HEADER = ("scenario", "strategy", "dynamics", "k", "seed", "index", "metric", "value")
SUMMARY_HEADER = ("scenario", "strategy", "dynamics", "k", "metric", "n", "mean", "std")
SWEEP_K = (100, 200, 300, 400, 500)

RETRIEVAL_METRICS = ("hops", "hops_ring", "hops_region", "hops_direct", "transfers", "crc_objects", "loaded")
DELAY_METRICS = ("perceived_delay", "retrieval_delay", "crc_objects")
LOAD_METRICS = ("mean", "max")


@dataclass(frozen=True)
class RunSpec:
    scenario: str
    config: SimConfig

    @property
    def key(self):
        c = self.config
        return (self.scenario, c.strategy, c.dynamics, c.objects, c.seed)


@dataclass(frozen=True)
class Scenario:
    name: str
    strategies: tuple[str, ...] = ()
    dynamics: tuple[bool, ...] = (False, True)
    ks: tuple[int, ...] = SWEEP_K
    cycles: int | None = None
    sample_window: int | None = None
    metrics: tuple[str, ...] = ()
    from_samples: bool = False

    def runs(self, base: SimConfig, reps: int, seed: int) -> list[RunSpec]:
        if reps < 1:
            raise ConfigError(["repetitions must be >= 1"])
        if any(k <= 0 for k in self.ks):
            raise ConfigError(["sweep values must be positive"])
        out = []
        for k in self.ks:
            for strategy in self.strategies or (base.strategy,):
                for dyn in self.dynamics:
                    for s in range(seed, seed + reps):
                        cfg = replace(base, objects=k, strategy=strategy, dynamics=dyn, seed=s)
                        if self.cycles is not None:
                            cfg = replace(cfg, cycles=self.cycles)
                        if self.sample_window is not None:
                            cfg = replace(cfg, sample_window=self.sample_window)
                        out.append(RunSpec(self.name, cfg.validate()))
        return out


def scenario(name: str, base: SimConfig, full: bool = False, objects: int | None = None,
             dynamics: bool | None = None, strategy: str | None = None) -> Scenario:
    dyn = (False, True) if dynamics is None else (dynamics,)
    ks = SWEEP_K if objects is None else (objects,)
    if name == "overhead":
        return Scenario(name, (strategy,) if strategy else ("improved", "basic"), dyn, ks,
                        metrics=RETRIEVAL_METRICS)
    if name == "delay":
        strategies = (strategy,) if strategy else ("improved", "basic", "distance_sorted")
        return Scenario(name, strategies, dyn, ks, metrics=DELAY_METRICS)
    if name == "load":
        cycles, window = (100_000, 1000) if full else (20_000, 200)
        return Scenario(name, (strategy or "improved",), dyn, (objects or base.objects,), cycles, window,
                        LOAD_METRICS, from_samples=True)
    if name == "custom":
        return Scenario(name, (strategy or base.strategy,), (base.dynamics,) if dynamics is None else dyn,
                        (objects or base.objects,), metrics=RETRIEVAL_METRICS + DELAY_METRICS[:2] + LOAD_METRICS,
                        from_samples=False)
    raise ConfigError([f"unknown scenario {name!r}"])


def _execute(spec: RunSpec):
    return spec, run(spec.config)


def _rows(scn: Scenario, spec: RunSpec, report) -> list[tuple]:
    name, strategy, dyn, k, seed = spec.key
    flag = "on" if dyn else "off"
    rows = []
    retrieval_metrics = [m for m in scn.metrics if m not in LOAD_METRICS]
    load_metrics = [m for m in scn.metrics if m in LOAD_METRICS]
    if not scn.from_samples:
        for i, rec in enumerate(report.retrievals):
            for metric in retrieval_metrics:
                rows.append((name, strategy, flag, k, seed, i, metric, rec[metric]))
    for i, sample in enumerate(report.load_samples):
        for metric in load_metrics:
            rows.append((name, strategy, flag, k, seed, i, metric, sample[metric]))
    for value in (r[-1] for r in rows):
        if not math.isfinite(value):
            raise ValueError("non-finite metric value")
    return rows


def run_scenario(scn: Scenario, base: SimConfig, reps: int = 5, seed: int = 42, jobs: int = 1) -> list[tuple]:
    """Execute every run of the sweep and return raw rows in (sweep, seed) order."""
    specs = scn.runs(base, reps, seed)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, specs))
    else:
        results = [_execute(s) for s in specs]
    rows = []
    for spec, report in results:
        rows.extend(_rows(scn, spec, report))
    return rows


def summarize(rows) -> list[tuple]:
    """Per sweep point and metric: mean and sample std of the per-run means."""
    per_run: dict[tuple, list[float]] = {}
    for scenario_name, strategy, dyn, k, seed, _, metric, value in rows:
        per_run.setdefault((scenario_name, strategy, dyn, k, metric, seed), []).append(value)
    points: dict[tuple, list[float]] = {}
    for (scenario_name, strategy, dyn, k, metric, _), values in per_run.items():
        points.setdefault((scenario_name, strategy, dyn, k, metric), []).append(statistics.fmean(values))
    out = []
    for key, means in points.items():
        std = statistics.stdev(means) if len(means) > 1 else 0.0
        out.append((*key, len(means), statistics.fmean(means), std))
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(rows, out: str | Path) -> tuple[Path, Path]:
    out = Path(out)
    summary_path = out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))
    out.write_text(to_csv(HEADER, rows))
    summary_path.write_text(to_csv(SUMMARY_HEADER, summarize(rows)))
    return out, summary_path

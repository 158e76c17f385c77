"""Full-factorial simulation benchmark with per-cell resume markers."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .baselines import gp_fit_predict, loess_fit_predict
from .bma import DoseGrid, fit_bfp, optimum_from_curve
from .dgp_sim import (BENCHMARK_REPLICATES, DEFAULT_DOSES, DEFAULT_REPLICATES, SCENARIOS, SIGMA_GRID,
                      ScenarioSpec, cell_seed, simulate, true_optimum)
from .evaluation import METHODS, BenchmarkRecord
from .serialization import read_benchmark_csv, write_benchmark_csv

log = logging.getLogger(__name__)

BFP_METHODS = {"bfp_pmedian": "pmedian", "bfp_pmean": "pmean", "bfp_best": "hpm"}


@dataclass(frozen=True)
class BenchmarkConfig:
    scenarios: tuple[str, ...] = SCENARIOS
    families: tuple[str, ...] = ("gaussian", "bernoulli")
    sigmas: tuple[float, ...] = SIGMA_GRID
    replicates: int = BENCHMARK_REPLICATES
    methods: tuple[str, ...] = METHODS
    master_seed: int = 0
    search: str = "mjmcmc"
    iterations: int = 20000
    draws: int = 4000
    doses: tuple[float, ...] = DEFAULT_DOSES
    per_dose: dict = field(default_factory=lambda: dict(DEFAULT_REPLICATES))
    grid_min: float = 0.4
    grid_max: float = 30.0
    grid_points: int = 512

    def __post_init__(self):
        for name in ("scenarios", "families", "sigmas", "methods", "doses"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if any(s not in SCENARIOS for s in self.scenarios):
            raise ValueError(f"scenarios must be drawn from {SCENARIOS}")
        if any(f not in DEFAULT_REPLICATES for f in self.families):
            raise ValueError("families must be gaussian and/or bernoulli")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")

    @property
    def grid(self) -> DoseGrid:
        return DoseGrid(self.grid_min, self.grid_max, self.grid_points)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class Cell:
    scenario: str
    family: str
    sigma: float
    replicate: int

    @property
    def key(self) -> str:
        return f"{self.scenario}_{self.family}_s{int(round(self.sigma * 10)):03d}_r{self.replicate}"


def plan_cells(cfg: BenchmarkConfig) -> list[Cell]:
    return [
        Cell(s, f, float(sg), r)
        for s in cfg.scenarios
        for f in cfg.families
        for sg in cfg.sigmas
        for r in range(1, cfg.replicates + 1)
    ]


def run_cell(cfg: BenchmarkConfig, cell: Cell) -> list[BenchmarkRecord]:
    seed = cell_seed(cfg.master_seed, cell.scenario, cell.family, cell.sigma, cell.replicate)
    spec = ScenarioSpec(cell.scenario, cell.family, cell.sigma,
                        design=tuple((d, cfg.per_dose[cell.family]) for d in cfg.doses), seed=seed)
    data = simulate(spec)
    grid = cfg.grid
    truth = true_optimum(cell.scenario, cell.family, grid)
    estimates: dict[str, float] = {}
    if any(m in BFP_METHODS for m in cfg.methods):
        res = fit_bfp(data, grid, search=cfg.search, iterations=cfg.iterations, seed=seed % (2**32),
                      draws=cfg.draws)
        for m, est in BFP_METHODS.items():
            if m in cfg.methods:
                estimates[m] = res.optimum(est).point
    if "gp" in cfg.methods:
        estimates["gp"] = optimum_from_curve(gp_fit_predict(data, grid), grid)
    if "loess" in cfg.methods:
        estimates["loess"] = optimum_from_curve(loess_fit_predict(data, grid), grid)
    return [
        BenchmarkRecord(m, cell.scenario, cell.family, cell.sigma, cell.replicate, estimates[m], truth)
        for m in cfg.methods
    ]


def _run_and_store(cfg: BenchmarkConfig, cell: Cell, part: Path) -> None:
    records = run_cell(cfg, cell)
    tmp = part.with_suffix(".tmp")
    write_benchmark_csv(records, tmp)
    os.replace(tmp, part)


def worker_count(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("DOSEOPT_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def run_benchmark(cfg: BenchmarkConfig, output: str | os.PathLike, threads: int | None = None,
                  progress=None) -> list[BenchmarkRecord]:
    """Run every missing cell, then write all records to ``output`` in plan order.

    Finished cells are kept under ``<output>.parts/<config fingerprint>/`` and
    skipped on re-runs.
    """
    output = Path(output)
    parts = output.parent / f"{output.name}.parts" / cfg.fingerprint()
    parts.mkdir(parents=True, exist_ok=True)
    cells = plan_cells(cfg)
    todo = [c for c in cells if not (parts / f"{c.key}.csv").exists()]
    log.info("benchmark: %d cells, %d to run", len(cells), len(todo))
    workers = worker_count(threads)
    if workers == 1 or len(todo) <= 1:
        for i, c in enumerate(todo, 1):
            _run_and_store(cfg, c, parts / f"{c.key}.csv")
            if progress:
                progress(i, len(todo), c)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_and_store, cfg, c, parts / f"{c.key}.csv") for c in todo]
            for i, (c, fut) in enumerate(zip(todo, futures), 1):
                fut.result()
                if progress:
                    progress(i, len(todo), c)
    records = []
    for c in cells:
        records.extend(read_benchmark_csv(parts / f"{c.key}.csv"))
    write_benchmark_csv(records, output)
    return records

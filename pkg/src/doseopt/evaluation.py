"""Benchmark scoring: optimum bias, rank tables and paired bootstrap comparisons."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

METHODS = ("bfp_pmedian", "bfp_pmean", "bfp_best", "gp", "loess")


class MissingCellError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkRecord:
    method: str
    scenario: str
    family: str
    sigma: float
    replicate: int
    estimated_optimum: float
    true_optimum: float

    @property
    def abs_bias(self) -> float:
        return abs(self.estimated_optimum - self.true_optimum)

    @property
    def cell(self) -> tuple[str, str, float, int]:
        return (self.scenario, self.family, self.sigma, self.replicate)


@dataclass(frozen=True)
class RankSummary:
    method: str
    sum_of_ranks: float
    median_rank: float
    iqr_rank: float
    mean_abs_bias: float
    sd_abs_bias: float


def _cell_matrix(records, methods=None):
    """Abs-bias matrix (cells x methods) after checking completeness."""
    by_cell: dict[tuple, dict[str, float]] = defaultdict(dict)
    for r in records:
        if r.method in by_cell[r.cell]:
            raise ValueError(f"duplicate record for method {r.method} in cell {r.cell}")
        by_cell[r.cell][r.method] = r.abs_bias
    if not by_cell:
        raise MissingCellError("no benchmark records")
    methods = sorted({m for row in by_cell.values() for m in row}) if methods is None else list(methods)
    cells = sorted(by_cell)
    missing = [(c, m) for c in cells for m in methods if m not in by_cell[c]]
    if missing:
        shown = "; ".join(f"{c} lacks {m}" for c, m in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise MissingCellError(f"incomplete cells: {shown}{more}")
    mat = np.array([[by_cell[c][m] for m in methods] for c in cells])
    return cells, methods, mat


def cell_ranks(records, methods=None):
    """Per-cell average ranks by ascending abs bias: ``(cells, methods, ranks)``."""
    cells, methods, mat = _cell_matrix(records, methods)
    return cells, methods, rankdata(mat, axis=1, method="average")


def rank_table(records, methods=None) -> list[RankSummary]:
    _, methods, mat = _cell_matrix(records, methods)
    ranks = rankdata(mat, axis=1, method="average")
    rows = []
    for j, m in enumerate(methods):
        r = ranks[:, j]
        q25, q75 = np.percentile(r, [25, 75])
        b = mat[:, j]
        rows.append(RankSummary(
            method=m,
            sum_of_ranks=float(r.sum()),
            median_rank=float(np.median(r)),
            iqr_rank=float(q75 - q25),
            mean_abs_bias=float(b.mean()),
            sd_abs_bias=float(b.std(ddof=1)) if b.size > 1 else 0.0,
        ))
    rows.sort(key=lambda s: (s.sum_of_ranks, s.method))
    return rows


@dataclass(frozen=True)
class BootstrapComparison:
    method: str
    reference: str
    mean_diff: float
    ci_low: float
    ci_high: float


def paired_bootstrap(records, reference_method: str = "bfp_pmedian", resamples: int = 2000,
                     seed: int = 0, level: float = 0.95) -> list[BootstrapComparison]:
    """Cell-resampling bootstrap of ``mean(abs_bias[method] - abs_bias[reference])``."""
    if resamples < 1000:
        raise ValueError("use at least 1000 bootstrap resamples")
    _, methods, mat = _cell_matrix(records)
    if reference_method not in methods:
        raise ValueError(f"reference method {reference_method!r} not in records")
    ref = mat[:, methods.index(reference_method)]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, mat.shape[0], size=(resamples, mat.shape[0]))
    alpha = (1 - level) / 2
    out = []
    for j, m in enumerate(methods):
        if m == reference_method:
            continue
        diff = mat[:, j] - ref
        boot = diff[idx].mean(axis=1)
        lo, hi = np.quantile(boot, [alpha, 1 - alpha])
        out.append(BootstrapComparison(m, reference_method, float(diff.mean()), float(lo), float(hi)))
    return out


@dataclass(frozen=True)
class SettingSummary:
    method: str
    scenario: str
    family: str
    sigma: float
    mean_abs_bias: float
    min_abs_bias: float
    max_abs_bias: float
    replicates: int


def setting_summary(records) -> list[SettingSummary]:
    """Mean, min and max abs bias per (method, scenario, family, sigma)."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        groups[(r.method, r.scenario, r.family, r.sigma)].append(r.abs_bias)
    return [
        SettingSummary(m, s, f, sg, float(np.mean(v)), float(np.min(v)), float(np.max(v)), len(v))
        for (m, s, f, sg), v in sorted(groups.items())
    ]


def mean_abs_bias_by(records, key) -> dict:
    groups: dict = defaultdict(list)
    for r in records:
        groups[key(r)].append(r.abs_bias)
    return {k: float(np.mean(v)) for k, v in groups.items()}

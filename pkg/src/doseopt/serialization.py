"""CSV and JSON formats: datasets, curves, benchmark records and fit reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FAMILIES, DoseResponseData
from .evaluation import BenchmarkRecord

REPORT_SCHEMA = "doseopt.fit_report"
REPORT_VERSION = 1

BENCHMARK_COLUMNS = ("method", "scenario", "family", "sigma", "replicate",
                     "estimated_optimum", "true_optimum", "abs_bias")


class InputFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


def _fmt(v: float) -> str:
    return repr(float(v))


def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_dataset_csv(path, family: str = "gaussian") -> DoseResponseData:
    """Read a headered ``dose,response`` CSV, validating every row."""
    if family not in FAMILIES:
        raise InputFormatError(f"unknown family {family!r}")
    doses, responses = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputFormatError(f"{path}: empty file")
        cols = [h.strip().lower() for h in header]
        if "dose" not in cols or "response" not in cols:
            raise InputFormatError(f"{path}: line 1: header must contain 'dose' and 'response'")
        i_d, i_r = cols.index("dose"), cols.index("response")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise InputFormatError(f"{path}: line {line}: expected {len(cols)} fields, got {len(row)}")
            try:
                d, r = float(row[i_d]), float(row[i_r])
            except ValueError:
                raise InputFormatError(f"{path}: line {line}: non-numeric value in {row!r}") from None
            if not (math.isfinite(d) and math.isfinite(r)):
                raise InputFormatError(f"{path}: line {line}: non-finite value")
            if d <= 0:
                raise InputFormatError(
                    f"{path}: line {line}: dose {d!r} is not positive; "
                    "shift all doses by a positive constant before fitting"
                )
            if family == "bernoulli" and r not in (0.0, 1.0):
                raise InputFormatError(f"{path}: line {line}: bernoulli response must be 0 or 1, got {row[i_r]!r}")
            doses.append(d)
            responses.append(r)
    if not doses:
        raise InputFormatError(f"{path}: no data rows")
    return DoseResponseData(np.array(doses), np.array(responses), family)


def write_dataset_csv(data: DoseResponseData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dose", "response"])
        for d, r in zip(data.doses, data.responses):
            w.writerow([_fmt(d), _fmt(r) if data.family == "gaussian" else str(int(r))])


def write_benchmark_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCHMARK_COLUMNS)
        for r in records:
            w.writerow([r.method, r.scenario, r.family, _fmt(r.sigma), r.replicate,
                        _fmt(r.estimated_optimum), _fmt(r.true_optimum), _fmt(r.abs_bias)])


def read_benchmark_csv(path) -> list[BenchmarkRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(BENCHMARK_COLUMNS[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise InputFormatError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                out.append(BenchmarkRecord(
                    row["method"], row["scenario"], row["family"], float(row["sigma"]),
                    int(row["replicate"]), float(row["estimated_optimum"]), float(row["true_optimum"]),
                ))
            except ValueError:
                raise InputFormatError(f"{path}: line {reader.line_num}: malformed record") from None
    return out


def write_rows_csv(rows, path, columns) -> None:
    """Write dataclass-like rows; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in columns)])


CURVE_COLUMNS = ("dose", "mean", "q025", "q500", "q975")


def write_curve_csv(summary, path, response_summary=None) -> None:
    cols = list(CURVE_COLUMNS)
    series = [summary.grid.values, summary.mean, summary.quantiles[0.025],
              summary.quantiles[0.5], summary.quantiles[0.975]]
    if response_summary is not None:
        cols += ["response_mean", "response_q025", "response_q500", "response_q975"]
        series += [response_summary.mean, response_summary.quantiles[0.025],
                   response_summary.quantiles[0.5], response_summary.quantiles[0.975]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*series):
            w.writerow([_fmt(v) for v in row])


def read_curve_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or ()}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v))
    return {k: np.array(v) for k, v in cols.items()}


@dataclass
class FitReport:
    input_digest: str
    family: str
    search_mode: str
    seed: int
    g: float
    top_models: list[dict]
    curve: dict
    optimum: dict
    runtime_ms: int
    settings: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "version": self.version,
            "input_digest": self.input_digest,
            "family": self.family,
            "search_mode": self.search_mode,
            "seed": self.seed,
            "g": self.g,
            "settings": self.settings,
            "top_models": self.top_models,
            "curve": self.curve,
            "optimum": self.optimum,
            "runtime_ms": self.runtime_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        """Build from parsed JSON; unknown fields are ignored."""
        if d.get("schema", REPORT_SCHEMA) != REPORT_SCHEMA:
            raise InputFormatError(f"not a fit report (schema {d.get('schema')!r})")
        if int(d.get("version", REPORT_VERSION)) > REPORT_VERSION:
            raise InputFormatError(f"fit report version {d['version']} is newer than supported")
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def write_fit_report(report: FitReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def read_fit_report(path) -> FitReport:
    return FitReport.from_dict(json.loads(Path(path).read_text()))

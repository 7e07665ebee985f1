"""Versioned report format, pooled-count aggregation and power-law fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ..errors import DegenerateFit, SchemaMismatch

SCHEMA_VERSION = 1


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy values to JSON-native ones; non-finite floats
    become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def probabilities(counts: dict) -> dict:
    """{name: {p, lo, hi}} recomputed from {name: {k, n}} pooled counts."""
    out = {}
    for name, c in sorted(counts.items()):
        ks, ns = np.atleast_1d(c["k"]), np.atleast_1d(c["n"])
        p = [float(k / n) if n else None for k, n in zip(ks, ns)]
        ci = [wilson_interval(int(k), int(n)) for k, n in zip(ks, ns)]
        out[name] = {"p": p, "lo": [a for a, _ in ci], "hi": [b for _, b in ci]}
    return out


def fit_exponent(x: Sequence[float], y: Sequence[float], log_x: bool = True,
                 log_y: bool = True) -> tuple[float, float]:
    """Least-squares slope (and its standard error) of y against x, in log
    coordinates by default. ``log_x=False`` gives a semi-log decay fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise DegenerateFit("need at least two (x, y) points")
    if log_x:
        x = np.log(x)
    if log_y:
        y = np.log(y)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0.0 or not np.isfinite(sxx):
        raise DegenerateFit("x has zero variance")
    slope = float(xm @ (y - y.mean())) / sxx
    if x.size > 2:
        resid = y - y.mean() - slope * xm
        stderr = math.sqrt(float(resid @ resid) / (x.size - 2) / sxx)
    else:
        stderr = 0.0
    return slope, stderr


@dataclass
class EnsembleReport:
    experiment: str
    config: dict
    realizations: int
    included: int
    excluded: dict = field(default_factory=dict)     # reason -> count
    results: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)       # name -> {k: [...], n: [...]}
    histograms: dict = field(default_factory=dict)   # name -> {edges, counts}
    diagnostics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    @property
    def excluded_total(self) -> int:
        return sum(self.excluded.values())

    @property
    def probabilities(self) -> dict:
        return probabilities(self.counts)

    def to_dict(self) -> dict:
        data = jsonable(asdict(self))
        data["probabilities"] = jsonable(self.probabilities)
        return data

    def payload(self) -> dict:
        """Everything except wall-clock timing; reproducible bit for bit."""
        data = self.to_dict()
        data.pop("timing")
        return data

    def payload_json(self) -> str:
        return json.dumps(self.payload(), sort_keys=True, allow_nan=False)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False)

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleReport":
        if data.get("schema") != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported report schema {data.get('schema')!r}")
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def normalized(self) -> "EnsembleReport":
        """Same report with every value converted to JSON-native types."""
        return EnsembleReport.from_dict(self.to_dict())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def load_report(path: str | Path) -> EnsembleReport:
    return EnsembleReport.from_dict(json.loads(Path(path).read_text()))


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def aggregate(reports: Sequence[EnsembleReport]) -> EnsembleReport:
    """Merge reports of one experiment by pooling counts and histograms.

    Probabilities are recomputed from the pooled counts. Experiment-specific
    results that depend only on counts are recomputed as well; other results
    are taken from the first report.
    """
    from .experiments import recompute_from_counts

    if not reports:
        raise SchemaMismatch("nothing to aggregate")
    reports = [r.normalized() for r in reports]
    first = reports[0]
    for r in reports[1:]:
        if r.schema != first.schema or r.experiment != first.experiment:
            raise SchemaMismatch("reports come from different experiments or schemas")
        if set(r.counts) != set(first.counts) or set(r.histograms) != set(first.histograms):
            raise SchemaMismatch("reports carry different count or histogram sets")
        for name, h in r.histograms.items():
            if h["edges"] != first.histograms[name]["edges"]:
                raise SchemaMismatch(f"histogram {name!r} has different bin edges")
        for name, c in r.counts.items():
            if len(c["k"]) != len(first.counts[name]["k"]):
                raise SchemaMismatch(f"count vector {name!r} has a different length")
            for key in c:
                if key not in ("k", "n") and c[key] != first.counts[name][key]:
                    raise SchemaMismatch(f"count vector {name!r} differs in {key!r}")

    counts = {}
    for name, c in first.counts.items():
        merged = dict(c)
        merged["k"] = [sum(r.counts[name]["k"][i] for r in reports) for i in range(len(c["k"]))]
        merged["n"] = [sum(r.counts[name]["n"][i] for r in reports) for i in range(len(c["n"]))]
        counts[name] = merged
    histograms = {}
    for name, h in first.histograms.items():
        histograms[name] = {
            "edges": h["edges"],
            "counts": [sum(r.histograms[name]["counts"][i] for r in reports)
                       for i in range(len(h["counts"]))],
        }
    excluded: dict = {}
    for r in reports:
        for reason, n in r.excluded.items():
            excluded[reason] = excluded.get(reason, 0) + n
    out = EnsembleReport(
        experiment=first.experiment,
        config=first.config,
        realizations=sum(r.realizations for r in reports),
        included=sum(r.included for r in reports),
        excluded=excluded,
        results=dict(first.results),
        counts=counts,
        histograms=histograms,
        diagnostics={"merged_reports": len(reports)},
        timing={},
    )
    recompute_from_counts(out)
    return out.normalized()

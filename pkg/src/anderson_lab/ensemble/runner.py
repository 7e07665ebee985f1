"""Run an experiment over an ensemble of disorder realizations.

Realization k of a run uses seed ``realization_seed(master_seed, first_index + k)``
and outputs are reduced in index order, so the report payload does not depend
on the number of worker processes or their scheduling.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..errors import ConvergenceFailure, DegenerateLevel, FailureBudgetExceeded, MissingCenter
from ..seeding import realization_seed
from .config import ExperimentConfig
from .experiments import EXPERIMENT_TYPES, WorkItem
from .report import EnsembleReport, write_rows

log = logging.getLogger(__name__)

# Numerical failures that drop a realization instead of aborting the run.
EXCLUSION_REASONS = {
    ConvergenceFailure: "convergence_failure",
    DegenerateLevel: "degenerate_level",
    MissingCenter: "missing_center",
}


def work_items(cfg: ExperimentConfig) -> list[WorkItem]:
    exp = EXPERIMENT_TYPES[cfg.experiment]
    items = []
    for size in exp.sizes(cfg):
        for _ in range(cfg.realizations):
            k = len(items)
            items.append(WorkItem(k, size, realization_seed(cfg.master_seed, cfg.first_index + k)))
    return items


def _run_item(cfg: ExperimentConfig, ctx: dict, item: WorkItem):
    exp = EXPERIMENT_TYPES[cfg.experiment]
    try:
        return item, exp.realize(cfg, ctx, item), None
    except tuple(EXCLUSION_REASONS) as exc:
        return item, None, EXCLUSION_REASONS[type(exc)]


def _run_chunk(cfg: ExperimentConfig, ctx: dict, items: list[WorkItem]):
    return [_run_item(cfg, ctx, item) for item in items]


def _execute(cfg: ExperimentConfig, ctx: dict, items: list[WorkItem]) -> list:
    if cfg.threads <= 1 or len(items) < 2:
        return _run_chunk(cfg, ctx, items)
    n_chunks = min(len(items), cfg.threads * 4)
    chunks = [items[i::n_chunks] for i in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_run_chunk, cfg, ctx, chunk) for chunk in chunks]
        done = [r for f in futures for r in f.result()]
    return sorted(done, key=lambda r: r[0].index)


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> EnsembleReport:
    """Run ``cfg`` and return its report.

    When the configured output paths are set and ``persist`` is true the JSON
    report (and optional per-realization CSV) are written. If more than
    ``failure_budget`` of the realizations are excluded the report is still
    written, then FailureBudgetExceeded is raised.
    """
    exp = EXPERIMENT_TYPES[cfg.experiment]
    t0 = time.perf_counter()
    ctx = exp.prepare(cfg)
    t_prepare = time.perf_counter() - t0

    items = work_items(cfg)
    results = _execute(cfg, ctx, items)
    outputs = [(item, out) for item, out, reason in results if reason is None]
    excluded: dict[str, int] = {}
    for _, _, reason in results:
        if reason is not None:
            excluded[reason] = excluded.get(reason, 0) + 1
    t_realize = time.perf_counter() - t0 - t_prepare

    if not outputs:
        raise FailureBudgetExceeded("every realization was excluded")
    reduced = exp.reduce(cfg, ctx, outputs)
    rows = reduced.pop("rows", [])
    report = EnsembleReport(
        experiment=cfg.experiment,
        config=cfg.echo(),
        realizations=len(items),
        included=len(outputs),
        excluded=excluded,
        results=reduced.get("results", {}),
        counts=reduced.get("counts", {}),
        histograms=reduced.get("histograms", {}),
        diagnostics=reduced.get("diagnostics", {}),
        timing={
            "prepare_s": t_prepare,
            "realizations_s": t_realize,
            "total_s": time.perf_counter() - t0,
            "threads": cfg.threads,
        },
    ).normalized()
    log.info("%s: %d/%d realizations kept in %.2fs", cfg.experiment, report.included,
             report.realizations, report.timing["total_s"])

    if persist:
        if cfg.output.path:
            Path(cfg.output.path).parent.mkdir(parents=True, exist_ok=True)
            report.save(cfg.output.path)
        if cfg.output.csv:
            Path(cfg.output.csv).parent.mkdir(parents=True, exist_ok=True)
            write_rows(cfg.output.csv, exp.csv_header, rows)

    total_excluded = sum(excluded.values())
    if total_excluded > cfg.failure_budget * len(items):
        raise FailureBudgetExceeded(
            f"{total_excluded} of {len(items)} realizations excluded "
            f"(budget {cfg.failure_budget:.1%}): {excluded}"
        )
    return report

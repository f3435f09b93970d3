"""Parallel batch runs of independent (scenario, seed) pairs."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .dsl import Scenario
from .sim import run


@dataclass(frozen=True)
class BatchOutput:
    name: str
    seed: int
    trace_csv: str
    summary_json: str
    ledger_csv: str


def _one(job: tuple[Scenario, int]) -> BatchOutput:
    sc, seed = job
    res = run(sc, seed)
    return BatchOutput(sc.name, seed, res.trace.to_csv(), res.summary.dumps(), res.trace.ledger_csv())


def run_batch(jobs: Sequence[tuple[Scenario, int]], workers: int = 1) -> list[BatchOutput]:
    """Outputs in job order; each run is isolated, so the worker count never changes a byte."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))

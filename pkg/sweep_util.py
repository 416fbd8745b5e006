#!/usr/bin/env python3
"""
Ordered parameter sweeps over a process pool.

Goals:
- One helper used by every sweep (f-hat table, kappa/H sweeps, H_C3 brackets).
- Results come back in input order, so output files do not depend on scheduling.

Notes:
- workers <= 1 runs in-process (no pickling, easier to debug).
- Task functions must be module-level so the pool can pickle them.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Callable, List, Optional, Sequence

logger = logging.getLogger(__name__)


@dataclass
class SweepConfig:
    workers: int = 1
    chunksize: int = 1
    label: str = "sweep"

    @classmethod
    def from_env(cls, label: str = "sweep", workers: Optional[int] = None) -> "SweepConfig":
        if workers is None:
            workers = int(os.getenv("GL_WORKERS", "1"))
        return cls(workers=max(1, int(workers)), label=label)


@dataclass
class SweepResult:
    values: List = field(default_factory=list)
    seconds: float = 0.0
    workers: int = 1


def run_sweep(fn: Callable, items: Sequence, config: Optional[SweepConfig] = None) -> SweepResult:
    """Apply fn to every item; the i-th value belongs to the i-th item."""
    config = config or SweepConfig()
    items = list(items)
    start = time.perf_counter()
    workers = min(config.workers, max(1, len(items)))
    logger.info("%s: %d point(s) on %d worker(s)", config.label, len(items), workers)
    if workers <= 1:
        values = []
        for k, item in enumerate(items):
            values.append(fn(item))
            logger.debug("%s: point %d/%d done", config.label, k + 1, len(items))
    else:
        with Pool(workers) as pool:
            values = pool.map(fn, items, chunksize=config.chunksize)
    seconds = time.perf_counter() - start
    logger.info("%s: finished in %.1fs", config.label, seconds)
    return SweepResult(values, seconds, workers)


def sweep(fn: Callable, items: Sequence, workers: int = 1, label: str = "sweep") -> List:
    """Convenience wrapper returning just the ordered values."""
    return run_sweep(fn, items, SweepConfig(workers=max(1, int(workers)), label=label)).values

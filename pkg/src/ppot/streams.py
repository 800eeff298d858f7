"""Reproducible substreams and a deterministic trial runner.

Every Monte Carlo trial draws from a generator derived from (seed, path) via
SeedSequence spawn keys, so results are bit-identical regardless of worker
count or evaluation order.  Reductions happen over a list indexed by trial.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Address of a reproducible random substream."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.default_rng(ss)


def default_workers() -> int:
    value = os.environ.get("PPOT_WORKERS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _call(args):
    fn, trial, stream, extra = args
    return fn(trial, stream, *extra)


def run_trials(fn, trials: int, stream: RngStream, *extra, workers: int | None = None) -> list:
    """Evaluate fn(trial_index, child_stream, *extra) for each trial.

    Results come back ordered by trial index; per-trial substreams make the
    output independent of the worker count.
    """
    if workers is None:
        workers = default_workers()
    jobs = [(fn, i, stream.child(i), extra) for i in range(trials)]
    if workers <= 1 or trials < 4:
        return [_call(job) for job in jobs]
    chunk = max(1, trials // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs, chunksize=chunk))


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and its standard error (0 for fewer than 2 samples)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    mean = float(np.mean(arr))
    if arr.size < 2:
        return mean, 0.0
    return mean, float(np.std(arr, ddof=1) / np.sqrt(arr.size))

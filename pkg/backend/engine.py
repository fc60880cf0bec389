"""
Experiment orchestration for gwldp.

Work is cut into fixed-size blocks, each with its own child SeedSequence,
so the stream a sample sees depends only on (seed, block index). Blocks run
in a process pool when GWLDP_THREADS > 1 and are reduced in block order,
which makes every output identical for any worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import datetime
from functools import reduce
from multiprocessing import Pool
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.config import get_settings, worker_count
from shared.debug_config import debug_run, debug_step, debug_timing

from .empirical import pair_counts
from .model import OffspringKernel, validate_root_law
from .tilting import (EstimatePartial, Event, TiltedSampler, TiltFunction, conditional_report,
                      decay_point, estimate_report)
from .trees import (Exhausted, Overflow, TypedTree, sample_size_conditioned, sample_size_conditioned_many,
                    sample_tree)

SIMULATE_BLOCK = 16
ESTIMATE_BLOCK = 1_000
PAIR_BLOCK = 50


def block_plan(total: int, block_size: int) -> List[int]:
    """Sizes of consecutive blocks covering `total` items."""
    full, rest = divmod(total, block_size)
    return [block_size] * full + ([rest] if rest else [])


def block_seeds(seed: int, count: int, key: Sequence[int] = ()) -> List[np.random.SeedSequence]:
    root = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return root.spawn(count)


def run_blocks(worker: Callable, tasks: List[tuple], threads: Optional[int] = None) -> list:
    """Apply worker to every task; results come back in task order."""
    threads = threads or worker_count()
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with Pool(processes=min(threads, len(tasks))) as pool:
        return pool.map(worker, tasks)


@dataclass
class SimulationBatch:
    """Trees from one simulate run, in sample order"""
    trees: List[TypedTree] = field(default_factory=list)
    attempts: List[int] = field(default_factory=list)
    overflows: int = 0
    exhausted: Optional[Exhausted] = None

    @property
    def total_attempts(self) -> int:
        return sum(self.attempts)


def _simulate_block(task) -> SimulationBatch:
    Q, mu, n, count, seed_seq, conditioned, retry_budget = task
    rng = np.random.default_rng(seed_seq)
    batch = SimulationBatch()
    for _ in range(count):
        if conditioned:
            outcome = sample_size_conditioned(Q, mu, n, rng, retry_budget,
                                              rng_seed=int(seed_seq.generate_state(1)[0]))
            if isinstance(outcome, Exhausted):
                batch.exhausted = outcome
                return batch
            batch.trees.append(outcome.tree)
            batch.attempts.append(outcome.attempts)
        else:
            outcome = sample_tree(Q, mu, rng, max_vertices=n)
            if isinstance(outcome, Overflow):
                batch.overflows += 1
                continue
            batch.trees.append(outcome)
            batch.attempts.append(1)
    return batch


def simulate_batch(Q: OffspringKernel, mu, n: int, samples: int, seed: int,
                   conditioned: bool = True, retry_budget: Optional[int] = None,
                   threads: Optional[int] = None) -> SimulationBatch:
    """Draw `samples` trees; conditioned on |T| = n, or unconditioned with max_vertices = n.

    The first exhausted block stops the reduction and is reported.
    """
    start = datetime.now()
    mu = validate_root_law(mu, Q.alphabet)
    budget = get_settings().retry_budget if retry_budget is None else retry_budget
    sizes = block_plan(samples, SIMULATE_BLOCK)
    seeds = block_seeds(seed, len(sizes))
    tasks = [(Q, mu, n, count, ss, conditioned, budget) for count, ss in zip(sizes, seeds)]
    debug_run(f"simulate: n={n} samples={samples} blocks={len(tasks)} conditioned={conditioned}")

    merged = SimulationBatch()
    for part in run_blocks(_simulate_block, tasks, threads):
        merged.trees.extend(part.trees)
        merged.attempts.extend(part.attempts)
        merged.overflows += part.overflows
        if part.exhausted is not None:
            merged.exhausted = part.exhausted
            break
    debug_step("SIMULATE", f"{len(merged.trees)} trees, {merged.overflows} overflows, "
                           f"{merged.total_attempts} attempts")
    debug_timing("simulate", start)
    return merged


def _estimate_block(task) -> EstimatePartial:
    sampler, n, event, count, seed_seq = task
    return sampler.run(n, event, count, np.random.default_rng(seed_seq))


def estimate_partial(sampler: TiltedSampler, n: int, event: Event, samples: int, seed: int,
                     threads: Optional[int] = None) -> EstimatePartial:
    """Block-merged weighted sums for one n; blocks are keyed by (seed, n)."""
    sizes = block_plan(samples, ESTIMATE_BLOCK)
    seeds = block_seeds(seed, len(sizes), key=(n,))
    tasks = [(sampler, n, event, count, ss) for count, ss in zip(sizes, seeds)]
    parts = run_blocks(_estimate_block, tasks, threads)
    return reduce(EstimatePartial.merge, parts, EstimatePartial())


@dataclass
class DecayRow:
    n: int
    report: object
    point: object


def decay_curve(Q: OffspringKernel, mu, event: Event, n_list: Sequence[int], samples: int,
                g: Optional[TiltFunction], seed: int, conditional: bool = False,
                threads: Optional[int] = None) -> List[DecayRow]:
    """Parallel estimate_decay_rate: one report and one decay point per n."""
    start = datetime.now()
    sampler = TiltedSampler.build(Q, mu, g)
    tilted = not sampler.g.is_zero
    rows = []
    for n in n_list:
        t0 = time.perf_counter()
        partial = estimate_partial(sampler, n, event, samples, seed, threads)
        if conditional:
            report = conditional_report(partial, n, seed, tilted)
        else:
            report = estimate_report(partial, n, seed, tilted)
        point = decay_point(n, report.estimate, report.stderr, report.unreliable)
        debug_step("DECAY_CURVE", f"n={n} estimate={report.estimate:.6g} hits={partial.hits} "
                                  f"({time.perf_counter() - t0:.2f}s)")
        rows.append(DecayRow(n, report, point))
    debug_timing("decay curve", start)
    return rows


def _pair_block(task) -> Tuple[np.ndarray, int]:
    Q, mu, n, count, seed_seq, retry_budget = task
    rng = np.random.default_rng(seed_seq)
    S = Q.size
    total = np.zeros((S, S))
    trees = sample_size_conditioned_many(Q, mu, n, count, rng, retry_budget)
    if isinstance(trees, Exhausted):
        return total, -1
    for tree in trees:
        total += pair_counts(tree) / (n - 1)
    return total, count


def mean_pair_measure(Q: OffspringKernel, mu, n: int, samples: int, seed: int,
                      retry_budget: Optional[int] = None,
                      threads: Optional[int] = None) -> Union[np.ndarray, Exhausted]:
    """Average of L_X over `samples` trees conditioned on |T| = n (n >= 2)."""
    mu = validate_root_law(mu, Q.alphabet)
    budget = get_settings().retry_budget if retry_budget is None else retry_budget
    sizes = block_plan(samples, PAIR_BLOCK)
    seeds = block_seeds(seed, len(sizes))
    tasks = [(Q, mu, n, count, ss, budget) for count, ss in zip(sizes, seeds)]
    S = Q.size
    total = np.zeros((S, S))
    for part, count in run_blocks(_pair_block, tasks, threads):
        if count < 0:
            return Exhausted(budget, n)
        total += part
    return total / samples

"""Sliding-window shuffle buffer emitting single-domain mini-batches.

Arrival order in production drifts (different domains spike at different
hours), so training directly in chronological order destabilizes the domain
mix.  The buffer holds a window of history, picks a domain proportional to
its buffered share, and samples that domain's examples uniformly without
replacement.  Every stored example is emitted exactly once.  Single
threaded by design: one caller drives the iterator.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .datagen import Example
from .errors import ConfigError


class ShuffleBuffer:
    """Bounded pool of examples bucketed by domain."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ConfigError(f"buffer capacity {capacity} must be positive")
        self.capacity = capacity
        self.rng = rng
        self._pools: dict[int, list[Example]] = {}
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def free(self) -> int:
        return self.capacity - self._size

    def add(self, ex: Example):
        if self._size >= self.capacity:
            raise ConfigError("buffer overfilled")
        self._pools.setdefault(ex.p, []).append(ex)
        self._size += 1

    def domain_counts(self) -> dict[int, int]:
        return {p: len(pool) for p, pool in self._pools.items() if pool}

    def sample_domain(self, min_count: int = 1) -> int | None:
        """Pick a domain with probability proportional to its buffer share."""
        counts = [(p, c) for p, c in sorted(self.domain_counts().items())
                  if c >= min_count]
        if not counts:
            return None
        weights = np.array([c for _, c in counts], dtype=np.float64)
        idx = int(self.rng.choice(len(counts), p=weights / weights.sum()))
        return counts[idx][0]

    def draw(self, p: int, k: int) -> list[Example]:
        """Remove and return k uniform examples of domain p."""
        pool = self._pools[p]
        k = min(k, len(pool))
        chosen = self.rng.choice(len(pool), size=k, replace=False)
        mask = np.zeros(len(pool), dtype=bool)
        mask[chosen] = True
        batch = [pool[i] for i in np.nonzero(mask)[0]]
        self._pools[p] = [ex for i, ex in enumerate(pool) if not mask[i]]
        self._size -= k
        return batch


def stream_batches(examples: Iterable[Example], buffer: ShuffleBuffer,
                   batch_size: int) -> Iterator[list[Example]]:
    """Yield single-domain batches from an arrival stream through the buffer.

    While the stream is live, only domains holding at least 2 buffered
    examples are eligible (downstream normalizers need batches of 2+).  Once
    the stream is exhausted the buffer drains completely, so leftover
    singletons are still emitted and conservation holds; callers that train
    should skip batches smaller than 2.
    """
    if batch_size > buffer.capacity:
        raise ConfigError(
            f"batch_size {batch_size} exceeds buffer capacity {buffer.capacity}"
        )
    it = iter(examples)
    exhausted = False

    def refill():
        nonlocal exhausted
        while not exhausted and buffer.free > 0:
            try:
                buffer.add(next(it))
            except StopIteration:
                exhausted = True

    refill()
    while len(buffer) > 0:
        p = buffer.sample_domain(min_count=2)
        if p is None or exhausted:
            # Drain mode (or no domain has 2 buffered): emit whatever exists.
            p = buffer.sample_domain(min_count=1)
            if p is None:
                break
        yield buffer.draw(p, batch_size)
        refill()


def iter_batches(examples: Iterable[Example], batch_size: int):
    """Chronological batching (no buffer): consecutive same-domain runs.

    Splits the stream wherever the domain changes so every batch stays
    single-domain; used as the no-buffer comparison point for the pipeline.
    """
    run: list[Example] = []
    for ex in examples:
        if run and (ex.p != run[0].p or len(run) >= batch_size):
            yield run
            run = []
        run.append(ex)
    if run:
        yield run


def batch_domain_mix(batches: list[list[Example]], window: int = 50
                     ) -> list[dict[int, float]]:
    """Per-window domain mix (fraction of examples per domain) over batches."""
    mixes = []
    for start in range(0, len(batches), window):
        chunk = batches[start:start + window]
        counts: dict[int, int] = {}
        total = 0
        for batch in chunk:
            for ex in batch:
                counts[ex.p] = counts.get(ex.p, 0) + 1
                total += 1
        mixes.append({p: c / total for p, c in counts.items()})
    return mixes


def mean_tv_distance(mixes: list[dict[int, float]],
                     global_mix: dict[int, float]) -> float:
    """Average total-variation distance of window mixes from the global mix."""
    tvs = []
    for mix in mixes:
        domains = set(mix) | set(global_mix)
        tv = 0.5 * sum(abs(mix.get(p, 0.0) - global_mix.get(p, 0.0))
                       for p in domains)
        tvs.append(tv)
    return float(np.mean(tvs))

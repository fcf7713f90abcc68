"""Deterministic batching of sample windows, with optional prefetching."""

from __future__ import annotations

import queue
import threading

import numpy as np

from ..errors import DataError


def sliding_window_count(n_frames: int, window: int) -> int:
    if n_frames < window:
        raise DataError(f"{n_frames} frames cannot fill a window of {window}")
    return n_frames - window + 1


def make_batches(samples, batch_size: int, shuffle_seed: int | None = None):
    """Group pre-windowed samples into batches.

    Shuffles deterministically when `shuffle_seed` is given, preserves
    order otherwise; a partial final batch is dropped.  Yields lists of
    SampleSequence.
    """
    n = len(samples)
    if batch_size < 1:
        raise DataError(f"batch_size must be positive, got {batch_size}")
    if n < batch_size:
        raise DataError(f"dataset of {n} samples cannot fill a batch of {batch_size}")
    order = np.arange(n)
    if shuffle_seed is not None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(shuffle_seed)))
        order = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield [samples[int(i)] for i in order[start : start + batch_size]]


def epoch_batches(samples, batch_size: int, seed: int, epoch: int):
    """Epoch-varying but reproducible shuffle: one stream per (seed, epoch)."""
    mixed = np.random.SeedSequence([seed, epoch]).generate_state(1)[0]
    return make_batches(samples, batch_size, shuffle_seed=int(mixed))


class Prefetcher:
    """Background producer feeding a bounded queue.

    Keeps at most `capacity` items in flight; iteration order is exactly
    the source order, so wrapping an iterator changes timing, never
    results.  Exceptions in the worker surface in the consumer.
    """

    _DONE = object()

    def __init__(self, iterable, capacity: int):
        self.queue = queue.Queue(maxsize=max(1, capacity))
        self.error = None
        self.thread = threading.Thread(target=self._produce, args=(iter(iterable),), daemon=True)
        self.thread.start()

    def _produce(self, it):
        try:
            for item in it:
                self.queue.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            self.error = exc
        finally:
            self.queue.put(self._DONE)

    def __iter__(self):
        while True:
            item = self.queue.get()
            if item is self._DONE:
                if self.error is not None:
                    raise self.error
                return
            yield item

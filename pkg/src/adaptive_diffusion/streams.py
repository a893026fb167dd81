"""Counter-based random streams.

Every draw is a pure function of ``(seed, trial, channel, k)``: draws are
produced in fixed chunks of ``CHUNK`` steps, each chunk seeded from the
tuple ``(seed, trial, channel, chunk_index)``.  Trial ``j`` therefore sees
the same numbers no matter how many other trials run or in which order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

CHUNK = 1024

NOISE = 0
REGRESSORS = 1
SEARCH = 2


def chunk_generator(seed: int, trial: int, channel: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(trial), int(channel), int(chunk)])
    return np.random.Generator(np.random.Philox(ss))


@lru_cache(maxsize=256)
def _normal_chunk(seed: int, trial: int, channel: int, chunk: int, width: int) -> np.ndarray:
    out = chunk_generator(seed, trial, channel, chunk).standard_normal((CHUNK, width))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def _uniform_chunk(seed: int, trial: int, channel: int, chunk: int, width: int) -> np.ndarray:
    out = chunk_generator(seed, trial, channel, chunk).random((CHUNK, width))
    out.setflags(write=False)
    return out


def _gather(fn, seed, trial, channel, start, count, width) -> np.ndarray:
    if count <= 0:
        return np.empty((0, width))
    first, last = start // CHUNK, (start + count - 1) // CHUNK
    parts = [fn(seed, trial, channel, c, width) for c in range(first, last + 1)]
    block = parts[0] if len(parts) == 1 else np.concatenate(parts)
    offset = start - first * CHUNK
    return block[offset: offset + count]


def normals(seed: int, trial: int, channel: int, start: int, count: int, width: int) -> np.ndarray:
    """Standard normal draws for steps ``start .. start+count-1``, shape ``(count, width)``."""
    return _gather(_normal_chunk, seed, trial, channel, start, count, width)


def uniforms(seed: int, trial: int, channel: int, start: int, count: int, width: int) -> np.ndarray:
    """Uniform [0, 1) draws for steps ``start .. start+count-1``, shape ``(count, width)``."""
    return _gather(_uniform_chunk, seed, trial, channel, start, count, width)


def batch_normals(seed: int, trials, channel: int, start: int, count: int, width: int) -> np.ndarray:
    """Stack of :func:`normals` over ``trials``, shape ``(len(trials), count, width)``."""
    return np.stack([normals(seed, t, channel, start, count, width) for t in trials])


def batch_uniforms(seed: int, trials, channel: int, start: int, count: int, width: int) -> np.ndarray:
    return np.stack([uniforms(seed, t, channel, start, count, width) for t in trials])

"""
Worker Pool and Random Streams

All parallel work goes through `run_parallel`, a thin wrapper around
`joblib.Parallel`, and every random stream is derived from the master seed, a stream
domain and integer coordinates. Results never depend on the number of workers.
"""

from typing import Any, Callable, Iterable, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from rompy.logging import get_logger

from equity_collectivity.types import RandomStream

logger = get_logger(__name__)

MAX_SEED = 2**64 - 1


def seed_sequence(
    seed: int, stream: Union[RandomStream, int], *coords: int
) -> np.random.SeedSequence:
    """Seed sequence keyed by the master seed, a stream domain and coordinates.

    The master seed is the entropy and `(stream, len(coords), *coords)` the spawn
    key, so keys of different domains or different lengths never share a stream.

    Parameters
    ----------
    seed: int
        Master seed in [0, 2**64 - 1].
    stream: RandomStream
        Domain of the stream.
    coords: int
        Nonnegative coordinates identifying the stream inside its domain, for
        example `(m, n, draw_index)`.

    Returns
    -------
    seq: np.random.SeedSequence
        Seed sequence of the stream.

    """
    if seed < 0 or seed > MAX_SEED:
        raise ValueError(f"Seed {seed} outside [0, 2**64 - 1]")
    stream = RandomStream(stream)
    for coord in coords:
        if coord < 0 or coord > MAX_SEED:
            raise ValueError(f"Stream coordinate {coord} outside [0, 2**64 - 1]")
    key = (int(stream), len(coords)) + tuple(int(c) for c in coords)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def rng_for(
    seed: int, stream: Union[RandomStream, int], *coords: int
) -> np.random.Generator:
    """Counter-based generator for the stream keyed by seed, stream and coords.

    Examples
    --------

    .. ipython:: python
        :okwarning:

        from equity_collectivity.parallel import rng_for
        from equity_collectivity.types import RandomStream
        rng_for(42, RandomStream.PORTFOLIO, 2, 3, 0).integers(100, size=3)
        rng_for(42, RandomStream.PORTFOLIO, 2, 3, 0).integers(100, size=3)

    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, stream, *coords)))


def run_parallel(
    func: Callable[..., Any], tasks: Iterable[Sequence[Any]], threads: int = 1
) -> list[Any]:
    """Evaluate func over the argument tuples in tasks.

    Parameters
    ----------
    func: Callable
        Module-level function so it can be shipped to worker processes.
    tasks: Iterable[Sequence]
        Positional argument tuples, one per call.
    threads: int
        Width of the worker pool, 1 runs in the calling process.

    Returns
    -------
    results: list
        Results in submission order.

    """
    tasks = list(tasks)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    logger.debug(f"Running {len(tasks)} {func.__name__} tasks on {threads} workers")
    if threads == 1 or len(tasks) <= 1:
        return [func(*args) for args in tasks]
    return Parallel(n_jobs=threads)(delayed(func)(*args) for args in tasks)

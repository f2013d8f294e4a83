"""Thread-count control for the BLAS backend.

Results are bit-reproducible for a fixed thread count; one thread is the
deterministic default used by the test-suite and the CLI.
"""
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

from .errors import ConfigError

DEFAULT_THREADS = 1


@contextmanager
def thread_limit(threads: int | None = DEFAULT_THREADS):
    if threads is None:
        yield
        return
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    with threadpool_limits(limits=threads):
        yield

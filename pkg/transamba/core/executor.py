import os
import atexit
import logging
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)
logging.basicConfig(
    level=os.environ.get("LOGLEVEL", "WARN").upper(),
    format="[%(asctime)s]-[%(name)s]-[%(levelname)s]: %(message)s",
)

T = TypeVar("T")
R = TypeVar("R")

__GLOBAL_EXECUTOR = None


def get_executor():
    global __GLOBAL_EXECUTOR
    if __GLOBAL_EXECUTOR is None:
        __GLOBAL_EXECUTOR = VolumeExecutor()
    return __GLOBAL_EXECUTOR


def _shutdown_global_executor():
    """Ensure the global executor is stopped at interpreter exit."""
    global __GLOBAL_EXECUTOR
    try:
        if __GLOBAL_EXECUTOR is not None:
            __GLOBAL_EXECUTOR.stop()
    except Exception:
        # Best-effort cleanup; ignore errors during interpreter shutdown
        pass


# Register shutdown hook
atexit.register(_shutdown_global_executor)


class VolumeExecutor:
    """Maps a function over independent volumes.

    Results always come back in submission order, so anything merged from
    them is identical for every worker count. With one worker (the default,
    overridable through ``TRANSAMBA_WORKERS``) work runs inline on the
    calling thread.
    """

    def __init__(self, workers: Optional[int] = None):
        if workers is None:
            workers = int(os.environ.get("TRANSAMBA_WORKERS", "1"))
        if workers < 1:
            raise ValueError(f"worker count must be >= 1, got {workers}")
        self.workers = workers
        self._pool: Optional[ThreadPoolExecutor] = None
        self._stopped = False
        self._submitted = 0
        self._completed = 0
        self._failed = 0

    def _ensure_pool(self) -> ThreadPoolExecutor:
        if self._stopped:
            raise RuntimeError("VolumeExecutor has been stopped")
        if self._pool is None:
            self._pool = ThreadPoolExecutor(
                max_workers=self.workers, thread_name_prefix="transamba-volume"
            )
            logger.debug(f"Started volume pool with {self.workers} workers")
        return self._pool

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply ``fn`` to every item and return results in input order."""
        items = list(items)
        self._submitted += len(items)
        if self.workers == 1:
            if self._stopped:
                raise RuntimeError("VolumeExecutor has been stopped")
            results = []
            for item in items:
                try:
                    results.append(fn(item))
                except Exception:
                    self._failed += 1
                    raise
                self._completed += 1
            return results

        pool = self._ensure_pool()
        futures: List[Future] = [pool.submit(fn, item) for item in items]
        results = []
        for future in futures:
            try:
                results.append(future.result())
            except Exception as e:
                self._failed += 1
                logger.warning(f"Volume task failed with exception: {e}")
                for pending in futures:
                    pending.cancel()
                raise
            self._completed += 1
        return results

    def is_healthy(self) -> bool:
        """Check if the executor can still accept work."""
        return not self._stopped

    def get_stats(self) -> dict:
        """Get executor statistics for monitoring."""
        return {
            "is_healthy": self.is_healthy(),
            "workers": self.workers,
            "submitted": self._submitted,
            "completed": self._completed,
            "failed": self._failed,
            "pool_started": self._pool is not None,
        }

    def stop(self) -> None:
        """Stop the executor gracefully."""
        if self._pool is not None:
            logger.info("Stopping VolumeExecutor...")
            self._pool.shutdown(wait=True, cancel_futures=True)
            self._pool = None
        self._stopped = True


__all__ = ["VolumeExecutor", "get_executor"]

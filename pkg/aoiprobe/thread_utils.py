"""Provides optional threading for replicate runs and parameter sweeps
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional

from runtype import dataclass


@dataclass
class ThreadBase:
    "Provides utility methods for optional threading"

    threaded: bool = True
    max_threadpool_size: Optional[int] = 1

    def _thread_map(self, func: Callable, iterable: Iterable) -> list:
        "Maps func over iterable. Results are returned in input order."
        if not self.threaded:
            return list(map(func, iterable))

        with ThreadPoolExecutor(max_workers=self.max_threadpool_size) as task_pool:
            return list(task_pool.map(func, iterable))

"""
Batch Processing Service - evaluate many independent jobs over shared read-only inputs
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, List, Optional

logger = logging.getLogger(__name__)


class BatchStatus(Enum):
    """Batch job status."""
    PENDING = "pending"
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class BatchJob:
    """Represents a single job in a batch."""
    position: int
    payload: Any
    status: BatchStatus = BatchStatus.PENDING
    result: Any = None
    error: Optional[BaseException] = None


class BatchService:
    """
    Runs a function over a list of payloads with a thread pool.

    Results come back in submission order whatever the completion order, so
    a report assembled from them does not depend on the thread count.
    """

    def __init__(self, max_workers: int = 1):
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        self.max_workers = max_workers

    def run(self, fn: Callable[[Any], Any], payloads: Iterable[Any],
            progress_callback: Optional[Callable] = None,
            label: str = 'job') -> List[BatchJob]:
        """
        Process every payload and return the finished jobs.

        Args:
            fn: Function applied to each payload
            payloads: Inputs, one job each
            progress_callback: Optional callback(progress_percent, step)
            label: Name used in progress messages

        Returns:
            Jobs in submission order, each COMPLETED or FAILED
        """
        jobs = [BatchJob(position=i, payload=p) for i, p in enumerate(payloads)]
        total = len(jobs)
        if total == 0:
            return jobs

        def finish(job: BatchJob, done: int):
            if progress_callback:
                progress_callback(done / total * 100, f"{label} {done}/{total} complete")

        if self.max_workers == 1:
            for done, job in enumerate(jobs, start=1):
                self._process(fn, job)
                finish(job, done)
            return jobs

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self._process, fn, job): job for job in jobs}
            for done, future in enumerate(as_completed(futures), start=1):
                future.result()
                finish(futures[future], done)
        return jobs

    @staticmethod
    def _process(fn: Callable[[Any], Any], job: BatchJob) -> None:
        job.status = BatchStatus.PROCESSING
        try:
            job.result = fn(job.payload)
            job.status = BatchStatus.COMPLETED
        except Exception as e:  # recorded on the job, surfaced by map()
            job.error = e
            job.status = BatchStatus.FAILED

    def map(self, fn: Callable[[Any], Any], payloads: Iterable[Any],
            progress_callback: Optional[Callable] = None,
            label: str = 'job') -> List[Any]:
        """
        Like run(), but return plain results and re-raise the first failure.

        Returns:
            Results in submission order
        """
        jobs = self.run(fn, payloads, progress_callback, label)
        for job in jobs:
            if job.status is BatchStatus.FAILED:
                logger.debug("%s %d failed: %s", label, job.position, job.error)
                raise job.error
        return [job.result for job in jobs]

"""Serialized execution gate for on-device inference.

Device runtimes can hold only one model execution at a time. The gate hands
out tickets in submission order and lets exactly one job run; everyone else
waits for their number to come up.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field

from ..errors import QueueFull
from ..wire import ChatRequest

DEFAULT_QUEUE_DEPTH = 16


@dataclass
class LocalJob:
    job_id: int
    request: ChatRequest | None
    enqueue_time: float
    start_time: float | None = None
    end_time: float | None = None


@dataclass
class LocalGate:
    """FIFO ticket gate.

    ``depth`` bounds the number of outstanding jobs, the running one
    included; the submission that would exceed it raises :class:`QueueFull`.
    """

    depth: int = DEFAULT_QUEUE_DEPTH
    clock: object = time.monotonic
    history: list[LocalJob] = field(default_factory=list)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        self._cond = threading.Condition()
        self._ids = itertools.count(1)
        self._serving = 1  # ticket allowed to run next
        self._outstanding = 0
        self._abandoned: set[int] = set()

    @property
    def outstanding(self) -> int:
        with self._cond:
            return self._outstanding

    def enqueue(self, request: ChatRequest | None = None) -> LocalJob:
        """Take a ticket. Raises QueueFull when ``depth`` jobs are already outstanding."""
        with self._cond:
            if self._outstanding >= self.depth:
                raise QueueFull(f"{self._outstanding} jobs outstanding (depth {self.depth})")
            self._outstanding += 1
            return LocalJob(next(self._ids), request, self.clock())

    def wait_turn(self, job: LocalJob) -> None:
        with self._cond:
            while self._serving != job.job_id:
                self._cond.wait()
            job.start_time = self.clock()

    def release(self, job: LocalJob) -> None:
        with self._cond:
            if self._serving != job.job_id or job.end_time is not None:
                raise RuntimeError(f"job {job.job_id} does not hold the gate")
            job.end_time = self.clock()
            self.history.append(job)
            self._outstanding -= 1
            self._advance()

    def abandon(self, job: LocalJob) -> None:
        """Give up a ticket that has not started; it is skipped when its turn comes."""
        with self._cond:
            if job.start_time is not None:
                raise RuntimeError(f"job {job.job_id} already started; release it instead")
            self._outstanding -= 1
            self._abandoned.add(job.job_id)
            if self._serving == job.job_id:
                self._advance()

    def _advance(self) -> None:
        self._serving += 1
        while self._serving in self._abandoned:
            self._abandoned.discard(self._serving)
            self._serving += 1
        self._cond.notify_all()

    def run(self, fn, request: ChatRequest | None = None):
        """Run ``fn()`` under the gate, blocking until its turn."""
        job = self.enqueue(request)
        self.wait_turn(job)
        try:
            return fn()
        finally:
            self.release(job)

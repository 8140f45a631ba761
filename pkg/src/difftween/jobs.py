"""FIFO job queue for long-running generation work.

One worker executes jobs in submission order; the queue is the only writer to
the frame store. State reads never wait on model inference. The queue can run
its worker on a background thread (service mode) or drain synchronously
(batch and test mode).
"""

from __future__ import annotations

import threading
import time
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

JOB_KINDS = ("invert", "extract_pose", "generate_level", "regenerate_subtree", "evaluate")

_TRANSITIONS = {
    "queued": {"running"},
    "running": {"done", "failed"},
    "done": set(),
    "failed": set(),
}


@dataclass
class Job:
    kind: str
    project_id: str
    params: dict = field(default_factory=dict)
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    status: str = "queued"
    progress: float = 0.0
    error: Optional[str] = None
    result: dict = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.kind not in JOB_KINDS:
            raise ValueError(f"unknown job kind {self.kind!r}; known: {JOB_KINDS}")

    def _transition(self, new_status: str) -> None:
        if new_status not in _TRANSITIONS[self.status]:
            raise ValueError(f"illegal job transition {self.status} -> {new_status}")
        self.status = new_status

    def start(self) -> None:
        self._transition("running")

    def finish(self, result: Optional[dict] = None) -> None:
        self._transition("done")
        self.progress = 1.0
        if result:
            self.result = result

    def fail(self, message: str) -> None:
        self._transition("failed")
        self.error = message

    def set_progress(self, fraction: float) -> None:
        # Progress only moves forward; pollers see a monotone value.
        self.progress = max(self.progress, min(1.0, fraction))

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "project_id": self.project_id,
            "params": self.params,
            "status": self.status,
            "progress": self.progress,
            "error": self.error,
            "result": self.result,
        }


class JobQueue:
    """Single-worker FIFO queue dispatching to an executor callable.

    The executor receives (job) and returns an optional result dict; it should
    call job.set_progress as it goes. Exceptions mark the job failed.
    """

    def __init__(self, executor: Callable[[Job], Optional[dict]]):
        self.executor = executor
        self.jobs: dict[str, Job] = {}
        self._pending: list[str] = []
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._thread: Optional[threading.Thread] = None
        self._stopping = False

    def submit(self, job: Job) -> Job:
        with self._wake:
            self.jobs[job.id] = job
            self._pending.append(job.id)
            self._wake.notify()
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            if job_id not in self.jobs:
                raise KeyError(f"unknown job {job_id}")
            return self.jobs[job_id]

    def _next(self) -> Optional[Job]:
        with self._lock:
            if not self._pending:
                return None
            return self.jobs[self._pending.pop(0)]

    def _run_one(self, job: Job) -> None:
        job.start()
        try:
            result = self.executor(job)
            job.finish(result)
        except Exception as exc:  # job failures are data, not crashes
            job.fail(f"{type(exc).__name__}: {exc}")
            job.result["traceback"] = traceback.format_exc()

    def run_pending(self) -> int:
        """Drain the queue synchronously; returns the number of jobs executed."""
        count = 0
        while (job := self._next()) is not None:
            self._run_one(job)
            count += 1
        return count

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stopping = False
        self._thread = threading.Thread(target=self._worker, name="difftween-jobs", daemon=True)
        self._thread.start()

    def stop(self, timeout: float = 5.0) -> None:
        with self._wake:
            self._stopping = True
            self._wake.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=timeout)
            self._thread = None

    def _worker(self) -> None:
        while True:
            with self._wake:
                while not self._pending and not self._stopping:
                    self._wake.wait(timeout=0.5)
                if self._stopping and not self._pending:
                    return
            job = self._next()
            if job is not None:
                self._run_one(job)

    def wait_idle(self, timeout: float = 30.0) -> bool:
        """Block until nothing is pending or running. True when idle."""
        deadline = time.time() + timeout
        while time.time() < deadline:
            with self._lock:
                busy = bool(self._pending) or any(
                    j.status == "running" for j in self.jobs.values()
                )
            if not busy:
                return True
            time.sleep(0.01)
        return False

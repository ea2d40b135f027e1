"""In-memory job registry backing the long-running endpoints.

One worker thread executes jobs sequentially: training runs are CPU-bound
and share the process-global probability audit hook, so serial execution
keeps runs deterministic and isolated.
"""

import threading
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor

from ..errors import EngineError


class JobRecord:
    def __init__(self, job_id, kind):
        self.job_id = job_id
        self.kind = kind
        self.state = "queued"
        self.progress = None
        self.result = None
        self.error = None


class JobManager:
    def __init__(self, max_workers=1):
        self._jobs = {}
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=max_workers)

    def submit(self, kind, fn):
        """Queue ``fn(set_progress) -> result dict`` and return its job id."""
        job_id = uuid.uuid4().hex[:12]
        record = JobRecord(job_id, kind)
        with self._lock:
            self._jobs[job_id] = record

        def set_progress(current, total):
            record.progress = {"current": current, "total": total}

        def runner():
            record.state = "running"
            try:
                record.result = fn(set_progress)
                record.state = "done"
            except EngineError as exc:
                record.error = {"category": exc.category, "message": str(exc)}
                record.state = "failed"
            except Exception as exc:  # noqa: BLE001 - job boundary
                record.error = {"category": "internal",
                                "message": f"{type(exc).__name__}: {exc}"}
                record.state = "failed"
                traceback.print_exc()

        self._executor.submit(runner)
        return job_id

    def get(self, job_id):
        with self._lock:
            return self._jobs.get(job_id)

    def all(self):
        with self._lock:
            return list(self._jobs.values())

"""
A small thread pool for experiment replicates.

Jobs go onto a shared bus; each worker is a thread driven by a state machine that pulls a job, runs it,
posts the result under the job's key, and exits once the bus is drained. Results are collected by key,
so the order in which workers finish has no effect on the output.
"""
import logging
import queue
import threading
from typing import Any, Callable, Hashable, Optional

logger = logging.getLogger(__name__)


class Job:
    """
    A single unit of work on the job bus.
    """

    def __init__(self, key: Hashable, func: Callable, *args, **kwargs):
        self.key = key
        self.func = func
        self.args = args
        self.kwargs = kwargs

    def run(self) -> Any:
        return self.func(*self.args, **self.kwargs)

    def __repr__(self):
        return f"Job(key={self.key!r}, func={getattr(self.func, '__name__', self.func)!r})"


class JobBus:
    """
    Shared job queue and result store for the workers.
    """

    def __init__(self):
        self.jobs = queue.Queue()
        self.results = {}
        self.errors = {}
        self.workers = {}
        self.lock = threading.Lock()

    def register_worker(self, name: str, worker: 'ReplicateWorker'):
        with self.lock:
            self.workers[name] = worker

    def submit(self, job: Job):
        self.jobs.put(job)

    def next_job(self, timeout: Optional[float] = None) -> Optional[Job]:
        try:
            if timeout is None:
                return self.jobs.get_nowait()
            return self.jobs.get(timeout=timeout)
        except queue.Empty:
            return None

    def post_result(self, key: Hashable, value: Any):
        with self.lock:
            self.results[key] = value

    def post_error(self, key: Hashable, error: Exception):
        with self.lock:
            self.errors[key] = error

    def start_workers(self):
        for worker in list(self.workers.values()):
            worker.start()

    def join_workers(self):
        for worker in list(self.workers.values()):
            worker.join()


class StateMachine:
    def __init__(self, initial_state: callable):
        self.state = initial_state

    def get_state(self) -> callable:
        return self.state

    def update(self, *args, **kwargs):
        self.state = self.state(*args, **kwargs)


class ReplicateWorker(threading.Thread):
    """
    Worker thread: wait_for_job -> run_job -> wait_for_job ... -> done.
    """

    def __init__(self, name: str, bus: JobBus):
        threading.Thread.__init__(self, name=name, daemon=True)
        self.bus = bus
        self.bus.register_worker(name, self)
        self.current: Optional[Job] = None
        self.completed = 0
        self.sm = StateMachine(self.wait_for_job)

    def wait_for_job(self):
        self.current = self.bus.next_job()
        if self.current is None:
            return self.done
        return self.run_job

    def run_job(self):
        job = self.current
        try:
            self.bus.post_result(job.key, job.run())
        except Exception as e:
            logger.error(f"{self.name}: job {job.key!r} failed: {e}")
            self.bus.post_error(job.key, e)
        self.completed += 1
        self.current = None
        return self.wait_for_job

    def done(self):
        return self.done

    def run(self):
        while self.sm.get_state() != self.done:
            self.sm.update()
        logger.debug(f"{self.name}: finished after {self.completed} jobs")


def run_jobs(jobs: list[Job], workers: int = 1) -> tuple[dict, dict]:
    """
    Run every job and return (results, errors), both keyed by job key. With one worker the jobs run in
    the calling thread.
    """
    bus = JobBus()
    for job in jobs:
        bus.submit(job)

    if workers <= 1:
        worker = ReplicateWorker("worker-0", bus)
        worker.run()
        return bus.results, bus.errors

    for i in range(min(workers, max(len(jobs), 1))):
        ReplicateWorker(f"worker-{i}", bus)
    bus.start_workers()
    bus.join_workers()
    return bus.results, bus.errors

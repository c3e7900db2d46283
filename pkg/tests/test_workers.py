import unittest

from workers import Job, JobBus, ReplicateWorker, StateMachine, run_jobs


def square(x):
    return x * x


def fail_on_three(x):
    if x == 3:
        raise ValueError("three")
    return x


class TestRunJobs(unittest.TestCase):

    def test_serial_and_parallel_agree(self):
        jobs = [Job(i, square, i) for i in range(20)]
        serial, _ = run_jobs(jobs, workers=1)
        parallel, _ = run_jobs([Job(i, square, i) for i in range(20)], workers=4)
        self.assertEqual(serial, parallel)
        self.assertEqual(serial[7], 49)

    def test_errors_are_collected(self):
        with self.assertLogs("workers", level="ERROR") as logs:
            results, errors = run_jobs([Job(i, fail_on_three, i) for i in range(5)], workers=2)
        self.assertEqual(sorted(results), [0, 1, 2, 4])
        self.assertEqual(list(errors), [3])
        self.assertIsInstance(errors[3], ValueError)
        self.assertIn("job 3 failed", logs.output[0])

    def test_no_jobs(self):
        self.assertEqual(run_jobs([], workers=3), ({}, {}))

    def test_keyword_arguments(self):
        results, _ = run_jobs([Job("a", divmod, 7, 2), Job("b", int, "ff", base=16)])
        self.assertEqual(results, {"a": (3, 1), "b": 255})


class TestBus(unittest.TestCase):

    def test_empty_bus(self):
        self.assertIsNone(JobBus().next_job())
        self.assertIsNone(JobBus().next_job(timeout=0.01))

    def test_worker_states(self):
        bus = JobBus()
        bus.submit(Job("x", square, 3))
        worker = ReplicateWorker("w", bus)
        self.assertEqual(worker.sm.get_state(), worker.wait_for_job)
        worker.sm.update()
        self.assertEqual(worker.sm.get_state(), worker.run_job)
        worker.sm.update()
        self.assertEqual(bus.results, {"x": 9})
        worker.sm.update()
        self.assertEqual(worker.sm.get_state(), worker.done)
        self.assertEqual(bus.workers, {"w": worker})

    def test_run_drains_bus(self):
        bus = JobBus()
        bus.submit(Job("a", square, 2))
        bus.submit(Job("b", square, 5))
        worker = ReplicateWorker("w", bus)
        worker.run()
        self.assertEqual(worker.completed, 2)
        self.assertEqual(bus.results, {"a": 4, "b": 25})
        self.assertEqual(worker.sm.get_state(), worker.done)


class TestStateMachine(unittest.TestCase):

    def test_transitions(self):
        visited = []

        def first():
            visited.append("first")
            return second

        def second():
            visited.append("second")
            return first

        sm = StateMachine(first)
        for _ in range(3):
            sm.update()
        self.assertEqual(visited, ["first", "second", "first"])
        self.assertIs(sm.get_state(), second)


if __name__ == "__main__":
    unittest.main()

import threading
import time

import pytest

from difftween.jobs import JOB_KINDS, Job, JobQueue


class TestJobStateMachine:
    def test_legal_lifecycle(self):
        job = Job(kind="invert", project_id="p")
        assert job.status == "queued"
        job.start()
        assert job.status == "running"
        job.finish({"x": 1})
        assert job.status == "done" and job.progress == 1.0 and job.result == {"x": 1}

    def test_failure_path(self):
        job = Job(kind="evaluate", project_id="p")
        job.start()
        job.fail("boom")
        assert job.status == "failed" and job.error == "boom"

    @pytest.mark.parametrize("sequence", [
        ("finish",), ("fail",), ("start", "start"), ("start", "finish", "start"),
        ("start", "finish", "fail"),
    ])
    def test_illegal_transitions(self, sequence):
        job = Job(kind="invert", project_id="p")
        with pytest.raises(ValueError):
            for step in sequence:
                {"start": job.start, "finish": job.finish, "fail": lambda: job.fail("x")}[step]()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Job(kind="mystery", project_id="p")
        assert set(JOB_KINDS) == {
            "invert", "extract_pose", "generate_level", "regenerate_subtree", "evaluate"
        }

    def test_progress_monotone(self):
        job = Job(kind="invert", project_id="p")
        job.set_progress(0.5)
        job.set_progress(0.3)
        assert job.progress == 0.5
        job.set_progress(2.0)
        assert job.progress == 1.0


class TestQueue:
    def test_fifo_order_synchronous(self):
        seen = []
        queue = JobQueue(lambda job: seen.append(job.params["n"]))
        for n in range(5):
            queue.submit(Job(kind="invert", project_id="p", params={"n": n}))
        assert queue.run_pending() == 5
        assert seen == [0, 1, 2, 3, 4]

    def test_executor_failure_marks_job(self):
        def executor(job):
            raise RuntimeError("model exploded")

        queue = JobQueue(executor)
        job = queue.submit(Job(kind="invert", project_id="p"))
        queue.run_pending()
        assert job.status == "failed"
        assert "model exploded" in job.error
        assert "traceback" in job.result

    def test_failed_job_does_not_block_queue(self):
        def executor(job):
            if job.params.get("explode"):
                raise RuntimeError("no")
            return {"ok": True}

        queue = JobQueue(executor)
        bad = queue.submit(Job(kind="invert", project_id="p", params={"explode": True}))
        good = queue.submit(Job(kind="invert", project_id="p"))
        queue.run_pending()
        assert bad.status == "failed" and good.status == "done"

    def test_background_worker(self):
        done = threading.Event()

        def executor(job):
            job.set_progress(0.5)
            done.set()
            return {"ran": True}

        queue = JobQueue(executor)
        queue.start()
        try:
            job = queue.submit(Job(kind="evaluate", project_id="p"))
            assert done.wait(timeout=5.0)
            assert queue.wait_idle(timeout=5.0)
            assert job.status == "done" and job.result == {"ran": True}
        finally:
            queue.stop()

    def test_get_unknown_job(self):
        queue = JobQueue(lambda job: None)
        with pytest.raises(KeyError):
            queue.get("nope")

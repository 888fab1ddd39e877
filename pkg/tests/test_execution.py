"""
End-to-end execution tests on an in-process cloud: scheduler, executors and
the task and thread programming models driven through a CloudClient.
"""
import json
import sys
import time

import pytest

from app.appmodel.application import create_application
from app.container.wire import parse_body
from app.errors import AppStopped, JoinTimeout, NotStarted, AlreadyStarted, OperationError, UnknownModel, UnknownOperation
from app.container.registry import ServiceCatalog
from app.execution.executor import ExecutorService
from app.execution.scheduler import DISPATCH_TIMEOUT_S
from app.execution.schemas import DispatchJob
from app.execution.schemas import AppState, JobPayload, JobState, SchedulerStats
from app.models.task import run_process, run_tasks, task
from app.models.thread import RemoteThread, ThreadState
from app.storage.schemas import FileDescriptor
from app.transversal.schemas import UsageReply, UsageRequest
from tests.conftest import wait_until

TIMEOUT = 30


def test_bag_of_tasks_runs_across_the_cloud(cloud_client):
    app = create_application(cloud_client, "task", display_name="fibs")
    results = run_tasks(app, [task("fib", {"n": n}) for n in range(12)], timeout=TIMEOUT)
    assert [r.state for r in results] == [JobState.COMPLETED] * 12
    assert [json.loads(r.result) for r in results] == [0, 1, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89]
    assert app.state == AppState.FINISHED

    status = app.status()
    assert {job.assigned_node for job in status.jobs} <= {c.node_id for c in cloud_client_nodes(cloud_client)}
    app.close()


def cloud_client_nodes(client):
    from app.directory.schemas import QueryReply, QueryRequest

    return parse_body(client.call("directory", "dir.query", QueryRequest()), QueryReply).records


def test_failing_task_reports_its_cause(cloud_client):
    app = create_application(cloud_client, "task")
    results = run_tasks(
        app,
        [task("fail", {"message": "broken input"}, max_attempts=2), task("echo", b"fine")],
        timeout=TIMEOUT,
    )
    failed, done = results
    assert failed.state == JobState.FAILED
    assert failed.failure_cause == "OperationError: broken input"
    assert (done.state, done.result) == (JobState.COMPLETED, b"fine")
    job = next(j for j in app.status().jobs if j.job_id == failed.unit_id)
    assert job.attempts == 2
    app.close()


def test_unknown_operation_is_refused_at_submit(cloud_client):
    app = create_application(cloud_client, "task")
    app.add_unit(task("no_such_operation"))
    with pytest.raises(UnknownOperation):
        app.submit()
    app.close()


def test_unknown_model_is_refused(cloud_client):
    with pytest.raises(UnknownModel):
        create_application(cloud_client, "dataflow")


def test_fire_and_forget_returns_before_completion(cloud_client):
    app = create_application(cloud_client, "task")
    results = run_tasks(app, [task("sleep", {"seconds": 0.5})], fire_and_forget=True)
    assert results[0].state in (JobState.QUEUED, JobState.STAGING, JobState.RUNNING)
    app.wait(TIMEOUT)
    assert app.unit(results[0].unit_id).state == JobState.COMPLETED
    app.close()


def test_events_reach_subscribers_in_unit_order(cloud_client):
    app = create_application(cloud_client, "task")
    seen = []
    app.on_event(lambda unit, event: seen.append((event.job_id, event.state)))
    unit_id = app.add_unit(task("echo", b"x"))
    app.submit()
    app.wait(TIMEOUT)
    assert wait_until(lambda: (unit_id, JobState.COMPLETED) in seen)
    states = [s for job_id, s in seen if job_id == unit_id]
    assert states[0] == JobState.QUEUED
    assert states[-1] == JobState.COMPLETED
    app.close()


def test_stop_aborts_outstanding_jobs(cloud_client):
    app = create_application(cloud_client, "task")
    ids = [app.add_unit(task("sleep", {"seconds": 30})) for _ in range(3)]
    app.submit()
    record = app.stop()
    assert record.state == AppState.STOPPED
    assert wait_until(lambda: app.poll_events() >= 0 and all(app.unit(i).state == JobState.ABORTED for i in ids), timeout=5)
    with pytest.raises(AppStopped):
        app.add_unit(task("echo"))
    app.close()


def test_run_process_task_with_staging(cloud_client):
    app = create_application(cloud_client, "task")
    channel = app.channel()
    source = app.upload("inputs/numbers.txt", b"3\n4\n")
    script = "open('total.txt', 'w').write(str(sum(int(l) for l in open('numbers.txt'))))"

    unit = run_process(
        sys.executable, ["-c", script],
        inputs=[source.model_copy(update={"local_name": "numbers.txt"})],
        outputs=[FileDescriptor(logical_name="outputs/total.txt", channel=channel, local_name="total.txt")],
    )
    results = run_tasks(app, [unit], timeout=TIMEOUT)
    assert results[0].state == JobState.COMPLETED, results[0].failure_cause
    assert app.download("outputs/total.txt") == b"7"
    app.close()


def test_missing_input_fails_staging(cloud_client):
    app = create_application(cloud_client, "task")
    ghost = FileDescriptor(logical_name="inputs/ghost", channel=app.channel())
    results = run_tasks(app, [task("echo", inputs=[ghost], max_attempts=1)], timeout=TIMEOUT)
    assert results[0].state == JobState.FAILED
    assert results[0].failure_cause.startswith("StageFailure")
    app.close()


def test_scheduler_stats_and_usage(cloud_client):
    app = create_application(cloud_client, "task")
    run_tasks(app, [task("sleep", {"seconds": 0.2}) for _ in range(3)], timeout=TIMEOUT)
    stats = parse_body(cloud_client.call("scheduler", "exec.stats"), SchedulerStats)
    assert stats.jobs_by_state["completed"] >= 3
    assert stats.completions_last_5min >= 3
    assert len(stats.nodes) == 3
    usage = parse_body(cloud_client.call("scheduler", "exec.usage", UsageRequest(app_id=app.app_id)), UsageReply)
    assert len(usage.records) == 3
    assert all(r.charged_seconds >= 0.2 for r in usage.records)
    assert usage.price == 3.0
    app.close()


def test_slots_are_never_oversubscribed(local_cloud):
    """One single-slot executor: the second job waits for the first."""
    from app.appmodel.client import CloudClient
    from app.appmodel.schemas import ClientConfig

    local_cloud.start_master(slots=1)
    local_cloud.wait_members(1)
    with CloudClient(ClientConfig(master=local_cloud.master.endpoint, timeout_s=5.0)) as client:
        app = create_application(client, "task")
        run_tasks(app, [task("sleep", {"seconds": 0.3}) for _ in range(2)], timeout=TIMEOUT)
        jobs = sorted(app.status().jobs, key=lambda j: j.started_at)
        first_end = next(r for r in parse_body(
            client.call("scheduler", "exec.usage", UsageRequest(app_id=app.app_id)), UsageReply
        ).records if r.job_id == jobs[0].job_id).ended_at
        assert jobs[1].started_at >= first_end
        app.close()


def test_jobs_of_a_killed_worker_are_requeued(local_cloud):
    from app.appmodel.client import CloudClient
    from app.appmodel.schemas import ClientConfig

    local_cloud.start_master(with_executor=False)
    worker = local_cloud.start_worker("worker-1", slots=1)
    local_cloud.wait_members(2)
    with CloudClient(ClientConfig(master=local_cloud.master.endpoint, timeout_s=5.0)) as client:
        app = create_application(client, "task")
        unit_id = app.add_unit(task("sleep", {"seconds": 2}))
        app.submit()
        assert wait_until(lambda: app.poll_events() >= 0 and app.unit(unit_id).state == JobState.RUNNING, timeout=10)
        worker.kill()
        local_cloud.start_worker("worker-2", slots=1)
        app.wait(TIMEOUT)
        job = app.status().jobs[0]
        assert job.state == JobState.COMPLETED
        assert job.attempts == 2
        app.close()


class LateReplyExecutor(ExecutorService):
    """Accepts every job, but only after the scheduler has stopped waiting."""

    dispatched = []

    def dispatch(self, envelope):
        time.sleep(DISPATCH_TIMEOUT_S + 1.0)
        reply = super().dispatch(envelope)
        LateReplyExecutor.dispatched.append(parse_body(envelope.payload, DispatchJob).job.job_id)
        return reply


def test_late_dispatch_reply_runs_the_job_once(local_cloud):
    from app.appmodel.client import CloudClient
    from app.appmodel.schemas import ClientConfig

    LateReplyExecutor.dispatched = []
    catalog = ServiceCatalog()
    catalog.register("executor", LateReplyExecutor)
    local_cloud.start_master(with_executor=False)
    local_cloud.start_worker("worker-1", slots=2, catalog=catalog)
    local_cloud.wait_members(2)
    with CloudClient(ClientConfig(master=local_cloud.master.endpoint, timeout_s=5.0)) as client:
        app = create_application(client, "task")
        results = run_tasks(app, [task("fib", {"n": 10})], timeout=TIMEOUT)
        assert json.loads(results[0].result) == 55
        job = app.status().jobs[0]
        assert (job.state, job.attempts) == (JobState.COMPLETED, 1)
        assert LateReplyExecutor.dispatched == [job.job_id]
        app.close()


# ---------------------------------------------------------------- thread model


def test_remote_thread_join(cloud_client):
    app = create_application(cloud_client, "thread")
    thread = RemoteThread(app, "fib", {"n": 20})
    assert thread.state == ThreadState.CREATED
    with pytest.raises(NotStarted):
        thread.join()
    thread.start()
    with pytest.raises(AlreadyStarted):
        thread.start()
    assert thread.join_value(TIMEOUT) == 6765
    assert thread.state == ThreadState.FINISHED
    app.close()


def test_remote_thread_raises_the_remote_error(cloud_client):
    app = create_application(cloud_client, "thread")
    thread = RemoteThread(app, "fail", {"message": "nope"}).start()
    with pytest.raises(OperationError, match="nope"):
        thread.join(TIMEOUT)
    app.close()


def test_remote_thread_join_timeout_and_abort(cloud_client):
    app = create_application(cloud_client, "thread")
    thread = RemoteThread(app, "sleep", {"seconds": 30}).start()
    with pytest.raises(JoinTimeout):
        thread.join(0.3)
    thread.abort()
    with pytest.raises(Exception) as info:
        thread.join(TIMEOUT)
    assert info.value.code == "Aborted"
    assert thread.state == ThreadState.ABORTED
    app.close()


def test_thread_needs_a_thread_application(cloud_client):
    from app.errors import InvalidRequest

    app = create_application(cloud_client, "task")
    with pytest.raises(InvalidRequest):
        RemoteThread(app, "echo")
    app.close()


def test_payload_params_accept_bytes():
    assert JobPayload(operation="echo", params=b"\x01").params == b"\x01"

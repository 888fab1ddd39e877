"""
Execution service: runs dispatched jobs on this node.

Each accepted job gets a slot in a bounded thread pool and a private
workspace. The worker stages inputs in, reports running, invokes the
registered operation, stages outputs out and reports the terminal outcome.
Reports the scheduler cannot take are kept in an outbox and retried.
"""
import logging
import os
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.clock import now_ms, now_s
from app.config import settings
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.errors import Aborted, CloudError, DispatchTimeout, OperationError, StageFailure, UnknownNode
from app.execution.operations import OperationContext, OperationRegistry, get_operation_registry
from app.execution.schemas import AbortOnNode, DispatchJob, DispatchReply, JobDescriptor, JobReport, JobState
from app.reservation.allocation import AllocationManager
from app.reservation.schemas import WindowSync
from app.storage.staging import stage_in, stage_out

logger = logging.getLogger(__name__)

SCHEDULER = "scheduler"
OUTBOX_FLUSH_S = 1.0
TIMEOUT_CAUSE = "Timeout"


class ExecutorOptions(BaseModel):
    slots: Optional[int] = Field(None, ge=1)  # defaults to the node's cpu_count
    workspace_root: Optional[str] = None
    wall_limit_s: Optional[float] = Field(None, gt=0)
    retain_workspaces: bool = False


@dataclass
class RunningJob:
    job: JobDescriptor
    scheduler_node: str
    ctx: OperationContext
    timed_out: bool = False


class ExecutorService(Service):
    name = "executor"
    Options = ExecutorOptions

    def __init__(self, container, options=None, registry: Optional[OperationRegistry] = None):
        super().__init__(container, options)
        self.registry = registry or get_operation_registry()
        self.slots = self.options.slots or os.cpu_count() or 1
        root = self.options.workspace_root or os.path.join(settings.STATE_DIR, "workspaces", container.node_id)
        self.workspace_root = Path(root)
        self.allocations = AllocationManager()
        self._pool: Optional[ThreadPoolExecutor] = None
        self._lock = threading.Lock()
        self._busy = 0
        self._running: Dict[str, RunningJob] = {}
        self._outbox: List[tuple] = []
        self._killed = threading.Event()
        self._flushing = threading.Event()

    # ---------------------------------------------------------------- lifecycle

    def on_start(self) -> None:
        self.workspace_root.mkdir(parents=True, exist_ok=True)
        self._pool = ThreadPoolExecutor(max_workers=self.slots, thread_name_prefix=f"{self.node_id[:8]}-slot")
        self.every(OUTBOX_FLUSH_S, "exec.flush")
        logger.info(f"Executor ready with {self.slots} slots in {self.workspace_root}")

    def on_stop(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
        self._flush_outbox()

    def on_kill(self) -> None:
        self._killed.set()
        with self._lock:
            running = list(self._running.values())
        for run in running:
            run.ctx.cancel()
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)

    def busy(self) -> bool:
        with self._lock:
            return self._busy > 0

    def advertise(self) -> Dict[str, int]:
        return {"slots_total": self.slots}

    @property
    def slots_busy(self) -> int:
        with self._lock:
            return self._busy

    # ---------------------------------------------------------------- handlers

    @handles("exec.dispatch")
    def dispatch(self, envelope: ServiceEnvelope) -> DispatchReply:
        call = parse_body(envelope.payload, DispatchJob)
        job = call.job
        admission = self.allocations.admissible(self.node_id, job.app_id, bool(job.owner), now_s())
        if not admission.admit:
            return DispatchReply(accepted=False, reason=admission.reason)
        if job.payload.operation not in self.registry:
            return DispatchReply(accepted=False, reason="unknown operation")
        ctx = OperationContext(
            workspace=self.workspace_root / f"{job.job_id}-{job.attempts}",
            job_id=job.job_id,
            app_id=job.app_id,
            attempt=job.attempts,
            node_id=self.node_id,
        )
        with self._lock:
            if self._busy >= self.slots or job.job_id in self._running:
                return DispatchReply(accepted=False, reason="no free slot")
            self._busy += 1
            assert self._busy <= self.slots, "executor slots oversubscribed"
            self._running[job.job_id] = RunningJob(job=job, scheduler_node=call.scheduler_node, ctx=ctx)
        self._pool.submit(self._execute, job.job_id)
        return DispatchReply(accepted=True)

    @handles("exec.abort")
    def abort(self, envelope: ServiceEnvelope) -> None:
        call = parse_body(envelope.payload, AbortOnNode)
        with self._lock:
            run = self._running.get(call.job_id)
        if run is not None and run.job.attempts == call.attempt:
            logger.info(f"Aborting job {call.job_id}", extra={"job_id": call.job_id})
            run.ctx.cancel()
        return None

    @handles("res.sync")
    def sync_windows(self, envelope: ServiceEnvelope) -> None:
        self.allocations.sync(parse_body(envelope.payload, WindowSync))
        return None

    @handles("exec.flush")
    def flush(self, envelope: ServiceEnvelope) -> None:
        if self._outbox and not self._flushing.is_set():
            self._flushing.set()
            threading.Thread(target=self._flush_outbox, name="exec-outbox", daemon=True).start()
        return None

    # ---------------------------------------------------------------- worker

    def _execute(self, job_id: str) -> None:
        run = self._running[job_id]
        job, ctx = run.job, run.ctx
        started_at: Optional[int] = None
        report = JobReport(job_id=job.job_id, attempt=job.attempts, node_id=self.node_id, state=JobState.FAILED)
        limit = self.options.wall_limit_s
        timer = None
        try:
            ctx.workspace.mkdir(parents=True, exist_ok=True)
            stage_in(job.staging, ctx.workspace)
            ctx.check_cancelled()
            started_at = now_ms()
            self._send(run, report.model_copy(update={"state": JobState.RUNNING, "started_at": started_at}), retry=True)
            if limit is not None:
                timer = threading.Timer(limit, self._wall_limit, args=(run,))
                timer.daemon = True
                timer.start()
            result = self.registry.run(job.payload.operation, job.payload.params, ctx)
            ctx.check_cancelled()
            staged = stage_out(job.staging, ctx.workspace)
            report = report.model_copy(update={
                "state": JobState.COMPLETED,
                "result": result,
                "outputs": staged.outputs,
                "missing_outputs": staged.missing,
            })
        except Aborted:
            cause = TIMEOUT_CAUSE if run.timed_out else "Aborted"
            report = report.model_copy(update={"failure_cause": cause})
        except StageFailure as e:
            logger.info(f"Job {job_id} staging failed: {e.cause}", extra={"job_id": job_id})
            report = report.model_copy(update={"failure_cause": f"StageFailure: {e.cause or e.message}"})
        except OperationError as e:
            report = report.model_copy(update={"failure_cause": f"OperationError: {e.message}"})
        except CloudError as e:
            report = report.model_copy(update={"failure_cause": f"{e.code}: {e.message}"})
        except Exception as e:
            logger.exception(f"Job {job_id} crashed the worker")
            report = report.model_copy(update={"failure_cause": f"OperationError: {type(e).__name__}: {e}"})
        finally:
            if timer is not None:
                timer.cancel()
            if not self.options.retain_workspaces:
                shutil.rmtree(ctx.workspace, ignore_errors=True)
            with self._lock:
                self._running.pop(job_id, None)
                self._busy -= 1
        if self._killed.is_set():
            return
        report = report.model_copy(update={"started_at": started_at, "ended_at": now_ms()})
        self._send(run, report, retry=True)

    def _wall_limit(self, run: RunningJob) -> None:
        logger.info(f"Job {run.job.job_id} exceeded its wall limit", extra={"job_id": run.job.job_id})
        run.timed_out = True
        run.ctx.cancel()

    def _send(self, run: RunningJob, report: JobReport, retry: bool) -> None:
        try:
            for attempt in Retrying(
                stop=stop_after_attempt(4 if retry else 1),
                wait=wait_exponential(multiplier=0.1, max=1.0),
                retry=retry_if_exception_type((DispatchTimeout, UnknownNode)),
                reraise=True,
            ):
                with attempt:
                    self.container.call(run.scheduler_node, SCHEDULER, "exec.report", report)
        except (DispatchTimeout, UnknownNode) as e:
            if report.state.terminal:
                logger.warning(f"Report for job {report.job_id} undelivered ({e.code}); kept for retry")
                with self._lock:
                    self._outbox.append((run.scheduler_node, report))
        except CloudError as e:
            logger.info(f"Scheduler rejected report for job {report.job_id}: {e.code}")

    def _flush_outbox(self) -> None:
        try:
            self._deliver_outbox()
        finally:
            self._flushing.clear()

    def _deliver_outbox(self) -> None:
        with self._lock:
            pending, self._outbox = self._outbox, []
        for scheduler_node, report in pending:
            try:
                self.container.call(scheduler_node, SCHEDULER, "exec.report", report)
            except (DispatchTimeout, UnknownNode):
                with self._lock:
                    self._outbox.append((scheduler_node, report))
            except CloudError as e:
                logger.info(f"Scheduler rejected report for job {report.job_id}: {e.code}")

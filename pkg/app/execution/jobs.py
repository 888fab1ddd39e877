"""
Job table: applications, jobs, their lifecycle state machine, the per
application event log and usage accounting.

Owned by the scheduler service; every method runs on its mailbox thread.

Allowed edges::

    created -> queued -> staging -> running -> completed | failed
    queued | staging | running -> aborted
    staging -> queued           (the executor refused the dispatch)
    failed -> queued            (only while attempts < max_attempts)

A terminal report that arrives while a job is still staging passes through
running implicitly.
"""
import logging
from collections import deque
from typing import Deque, Dict, Iterable, List, Optional, Set

from app.errors import IllegalTransition, InvalidRequest, UnknownApplication, UnknownJob, UnknownOperation
from app.execution.schemas import (
    TERMINAL_STATES,
    ApplicationRecord,
    AppState,
    JobDescriptor,
    JobEvent,
    JobReport,
    JobSpec,
    JobState,
)
from app.transversal.accounting import account
from app.transversal.schemas import UsageRecord

logger = logging.getLogger(__name__)

EDGES: Dict[JobState, Set[JobState]] = {
    JobState.CREATED: {JobState.QUEUED},
    JobState.QUEUED: {JobState.STAGING, JobState.ABORTED},
    JobState.STAGING: {JobState.RUNNING, JobState.QUEUED, JobState.ABORTED},
    JobState.RUNNING: {JobState.COMPLETED, JobState.FAILED, JobState.ABORTED},
    JobState.FAILED: {JobState.QUEUED},
    JobState.COMPLETED: set(),
    JobState.ABORTED: set(),
}

THROUGHPUT_WINDOW_MS = 5 * 60 * 1000
NODE_LOST = "NodeLost"


class JobTable:
    def __init__(self):
        self.apps: Dict[str, ApplicationRecord] = {}
        self.jobs: Dict[str, JobDescriptor] = {}
        self.events: Dict[str, List[JobEvent]] = {}
        self.usage: List[UsageRecord] = []
        self.completions: Deque[int] = deque()
        self._unit_seq: Dict[str, int] = {}

    # ---------------------------------------------------------------- applications

    def register_app(self, record: ApplicationRecord) -> ApplicationRecord:
        existing = self.apps.get(record.app_id)
        if existing is not None:
            if existing.owner != record.owner:
                raise InvalidRequest(f"application {record.app_id} already exists")
            return existing
        self.apps[record.app_id] = record
        self.events[record.app_id] = []
        return record

    def app(self, app_id: str) -> ApplicationRecord:
        record = self.apps.get(app_id)
        if record is None:
            raise UnknownApplication(f"no application {app_id}")
        return record

    def jobs_of(self, app_id: str) -> List[JobDescriptor]:
        return [j for j in self.jobs.values() if j.app_id == app_id]

    def _set_app_state(self, app_id: str, state: AppState) -> None:
        self.apps[app_id] = self.apps[app_id].model_copy(update={"state": state})

    def _maybe_finish(self, app_id: str) -> None:
        app = self.apps.get(app_id)
        if app is None or app.state != AppState.RUNNING:
            return
        if all(j.state in TERMINAL_STATES for j in self.jobs_of(app_id)):
            self._set_app_state(app_id, AppState.FINISHED)
            logger.info(f"Application {app_id} finished")

    # ---------------------------------------------------------------- submission

    def submit(
        self,
        app_id: str,
        specs: List[JobSpec],
        now: int,
        known_operations: Optional[Iterable[str]] = None,
    ) -> List[str]:
        """All-or-nothing: validate the whole batch before queueing any job."""
        app = self.app(app_id)
        if app.state == AppState.STOPPED:
            raise UnknownApplication(f"application {app_id} is stopped")
        if known_operations is not None:
            known = set(known_operations)
            for spec in specs:
                if spec.payload.operation not in known:
                    raise UnknownOperation(f"operation {spec.payload.operation!r} is not registered")
        ids = [s.job_id for s in specs]
        clashes = [i for i in ids if i in self.jobs]
        if clashes or len(set(ids)) != len(ids):
            raise InvalidRequest(f"duplicate job ids in submission: {sorted(set(clashes))[:3]}")

        for spec in specs:
            job = JobDescriptor(
                job_id=spec.job_id,
                app_id=app_id,
                model=app.model,
                payload=spec.payload,
                staging=spec.staging,
                max_attempts=spec.max_attempts,
                owner=app.owner,
                enqueued_at=now,
            )
            self.jobs[job.job_id] = job
            self._move(job.job_id, JobState.QUEUED)
        if specs and app.state != AppState.RUNNING:
            self._set_app_state(app_id, AppState.RUNNING)
        return ids

    # ---------------------------------------------------------------- state machine

    def get(self, job_id: str) -> JobDescriptor:
        job = self.jobs.get(job_id)
        if job is None:
            raise UnknownJob(f"no job {job_id}")
        return job

    def _move(self, job_id: str, to_state: JobState, **updates) -> JobDescriptor:
        job = self.jobs[job_id]
        if to_state not in EDGES[job.state]:
            raise IllegalTransition(f"job {job_id}: {job.state.value} -> {to_state.value}")
        job = job.model_copy(update={"state": to_state, **updates})
        self.jobs[job_id] = job
        self._emit(job)
        return job

    def _emit(self, job: JobDescriptor) -> None:
        log = self.events.setdefault(job.app_id, [])
        unit_seq = self._unit_seq.get(job.job_id, 0) + 1
        self._unit_seq[job.job_id] = unit_seq
        log.append(JobEvent(
            seq=len(log) + 1,
            unit_seq=unit_seq,
            job_id=job.job_id,
            state=job.state,
            at=job.enqueued_at if job.state == JobState.QUEUED else (job.started_at or 0),
            result=job.result if job.state == JobState.COMPLETED else None,
            failure_cause=job.failure_cause,
        ))

    def queued_in_order(self) -> List[JobDescriptor]:
        queued = [j for j in self.jobs.values() if j.state == JobState.QUEUED]
        return sorted(queued, key=lambda j: (j.enqueued_at, j.job_id))

    def mark_dispatched(self, job_id: str, node_id: str, incarnation: Optional[int] = None) -> JobDescriptor:
        job = self.get(job_id)
        return self._move(
            job_id,
            JobState.STAGING,
            assigned_node=node_id,
            assigned_incarnation=incarnation,
            attempts=job.attempts + 1,
            started_at=None,
            failure_cause=None,
        )

    def return_to_queue(self, job_id: str) -> JobDescriptor:
        """Undo a dispatch the executor refused; the attempt is not counted."""
        job = self.get(job_id)
        if job.state != JobState.STAGING:
            raise IllegalTransition(f"job {job_id} is {job.state.value}, not staging")
        return self._move(
            job_id,
            JobState.QUEUED,
            assigned_node=None,
            assigned_incarnation=None,
            attempts=job.attempts - 1,
        )

    def apply_report(self, report: JobReport, now: int) -> Optional[JobDescriptor]:
        """
        Advance a job from an executor report. Reports for another attempt,
        another node or an already terminal job are dropped (returns None).
        """
        job = self.jobs.get(report.job_id)
        if job is None:
            raise UnknownJob(f"no job {report.job_id}")
        if job.state in TERMINAL_STATES or job.state == JobState.QUEUED:
            return None
        if report.attempt != job.attempts or report.node_id != job.assigned_node:
            return None

        if report.state == JobState.RUNNING:
            if job.state != JobState.STAGING:
                return None
            return self._move(job.job_id, JobState.RUNNING, started_at=report.started_at or now)

        if report.state not in (JobState.COMPLETED, JobState.FAILED):
            raise InvalidRequest(f"executors cannot report {report.state.value}")
        if job.state == JobState.STAGING:
            job = self._move(job.job_id, JobState.RUNNING, started_at=report.started_at)
        started_at = report.started_at if report.started_at is not None else job.started_at
        self._account(job, started_at, report.ended_at or now)

        if report.state == JobState.COMPLETED:
            job = self._move(
                job.job_id,
                JobState.COMPLETED,
                result=report.result,
                outputs=report.outputs,
                missing_outputs=report.missing_outputs,
            )
            self.completions.append(now)
        else:
            job = self._fail(job.job_id, report.failure_cause or "OperationError", report.missing_outputs)
        self._maybe_finish(job.app_id)
        return job

    def _fail(self, job_id: str, cause: str, missing: Optional[List[str]] = None) -> JobDescriptor:
        job = self.jobs[job_id]
        updates = {"failure_cause": cause}
        if missing is not None:
            updates["missing_outputs"] = missing
        if job.attempts < job.max_attempts:
            # failed -> queued without surfacing a terminal event
            job = job.model_copy(update={"state": JobState.FAILED, **updates})
            self.jobs[job_id] = job
            logger.info(f"Job {job_id} attempt {job.attempts} failed ({cause}); requeued")
            return self._move(job_id, JobState.QUEUED, assigned_node=None, assigned_incarnation=None)
        logger.info(f"Job {job_id} failed terminally after {job.attempts} attempts: {cause}")
        return self._move(job_id, JobState.FAILED, **updates)

    def node_lost(self, job_id: str, now: int, cause: str = NODE_LOST) -> JobDescriptor:
        job = self.get(job_id)
        if job.state == JobState.STAGING:
            job = self._move(job_id, JobState.RUNNING, started_at=None)
        if job.state != JobState.RUNNING:
            raise IllegalTransition(f"job {job_id} is {job.state.value}, not on a node")
        self._account(job, job.started_at, now)
        job = self._fail(job_id, cause)
        self._maybe_finish(job.app_id)
        return job

    def abort(self, job_id: str, now: int) -> JobDescriptor:
        job = self.get(job_id)
        if JobState.ABORTED not in EDGES[job.state]:
            raise IllegalTransition(f"cannot abort a {job.state.value} job")
        if job.state == JobState.RUNNING:
            self._account(job, job.started_at, now)
        job = self._move(job_id, JobState.ABORTED, failure_cause="Aborted")
        self._maybe_finish(job.app_id)
        return job

    def stop_app(self, app_id: str, now: int) -> List[JobDescriptor]:
        """Abort outstanding jobs; returns those that were on a node."""
        self.app(app_id)
        on_nodes = []
        for job in self.jobs_of(app_id):
            if job.state in (JobState.STAGING, JobState.RUNNING):
                on_nodes.append(job)
            if job.state not in TERMINAL_STATES:
                self.abort(job.job_id, now)
        self._set_app_state(app_id, AppState.STOPPED)
        return on_nodes

    def _account(self, job: JobDescriptor, started_at: Optional[int], ended_at: int) -> None:
        record = account(
            user_id=job.owner,
            app_id=job.app_id,
            job_id=job.job_id,
            node_id=job.assigned_node or "",
            attempt=job.attempts,
            started_at_ms=started_at,
            ended_at_ms=ended_at,
        )
        if record is not None:
            self.usage.append(record)

    # ---------------------------------------------------------------- views

    def counts(self, app_id: Optional[str] = None) -> Dict[str, int]:
        counts = {s.value: 0 for s in JobState}
        for job in self.jobs.values():
            if app_id is None or job.app_id == app_id:
                counts[job.state.value] += 1
        return counts

    def on_node(self, node_id: str) -> List[JobDescriptor]:
        return [
            j for j in self.jobs.values()
            if j.assigned_node == node_id and j.state in (JobState.STAGING, JobState.RUNNING)
        ]

    def events_since(self, app_id: str, cursor: int) -> List[JobEvent]:
        self.app(app_id)
        return self.events.get(app_id, [])[cursor:]

    def completions_since(self, now: int) -> int:
        while self.completions and self.completions[0] < now - THROUGHPUT_WINDOW_MS:
            self.completions.popleft()
        return len(self.completions)

    def restore(
        self,
        apps: Iterable[ApplicationRecord],
        jobs: Iterable[JobDescriptor],
        usage: Iterable[UsageRecord],
    ) -> None:
        self.apps = {a.app_id: a for a in apps}
        self.jobs = {j.job_id: j for j in jobs}
        self.usage = list(usage)
        self.events = {app_id: [] for app_id in self.apps}
        self._unit_seq = {}
        # Rebuild a compact log: one event per job carrying its current state.
        for job in sorted(self.jobs.values(), key=lambda j: (j.enqueued_at, j.job_id)):
            self._emit(job)

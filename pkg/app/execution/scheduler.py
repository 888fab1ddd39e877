"""
Scheduling service: the central job queue of the cloud.

Runs on the master. Every tick (and eagerly after submits and reports) it
matches queued jobs to free executor slots: jobs of a reservation owner go
first on nodes inside the owner's active window, then the remaining queue is
served FIFO by (enqueued_at, job_id), each job going to the least loaded
admissible node.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

from pydantic import BaseModel, Field

from app.clock import now_ms
from app.config import settings
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.directory.schemas import MembershipRecord
from app.errors import AuthFailed, CloudError, DispatchTimeout, Unauthorized
from app.execution.jobs import JobTable
from app.execution.operations import get_operation_registry
from app.execution.schemas import (
    AbortOnNode,
    ApplicationRecord,
    AppRef,
    AppStatus,
    DispatchDecision,
    DispatchJob,
    DispatchReply,
    EventsReply,
    EventsRequest,
    ExecutorSlotState,
    JobDescriptor,
    JobRef,
    JobReport,
    JobState,
    RegisterApplication,
    SchedulerStats,
    SubmitAck,
    SubmitJobs,
)
from app.reservation.allocation import AllocationManager, admissible
from app.reservation.schemas import NodeWindow, WindowSync
from app.transversal.accounting import charged_by_node, price
from app.transversal.identity import Action, Credentials, Principal
from app.transversal.schemas import UsageReply, UsageRequest

logger = logging.getLogger(__name__)

EXECUTOR = "executor"
DISPATCH_TIMEOUT_S = 2.0
UNCONFIRMED_CAUSE = "DispatchTimeout"


class SchedulerOptions(BaseModel):
    tick_ms: int = Field(settings.SCHEDULE_TICK_MS, ge=10)
    # Hold non-owner jobs off nodes whose reserved window starts this soon.
    lead_time_s: int = Field(30, ge=0)
    max_attempts: int = Field(3, ge=1)
    # How long a dispatch whose reply was lost may stay staging without any report.
    dispatch_grace_s: float = Field(30.0, gt=0)


@dataclass
class NodeView:
    node_id: str
    slots_total: int
    busy: int = 0
    cpu: float = 0.0
    windows: List[NodeWindow] = field(default_factory=list)

    @property
    def free(self) -> int:
        return max(0, self.slots_total - self.busy)


def node_view(record: MembershipRecord, busy: int, windows: List[NodeWindow]) -> NodeView:
    return NodeView(
        node_id=record.node_id,
        slots_total=max(1, record.attributes.get("slots_total", record.static_profile.cpu_count)),
        busy=busy,
        cpu=record.last_stats.cpu_usage_percent,
        windows=windows,
    )


def plan_dispatch(
    queued: Sequence[JobDescriptor],
    nodes: Sequence[NodeView],
    now: int,
    lead_time_s: int = 0,
) -> List[DispatchDecision]:
    """
    Pure matchmaking for one tick. ``queued`` must already be in FIFO order;
    ``now`` is in seconds. Node views are updated in place as slots fill.
    """
    decisions: List[DispatchDecision] = []
    taken: Set[str] = set()

    def assign(job: JobDescriptor, node: NodeView, reason: str) -> None:
        node.busy += 1
        taken.add(job.job_id)
        decisions.append(DispatchDecision(job_id=job.job_id, node_id=node.node_id, attempt=job.attempts + 1, reason=reason))

    # Reservation owners first, on the nodes of their active window.
    for node in sorted(nodes, key=lambda n: n.node_id):
        owner = next((nw.bound_app for nw in node.windows if nw.window.contains(now)), None)
        if owner is None:
            continue
        for job in queued:
            if node.free == 0:
                break
            if job.app_id == owner and job.job_id not in taken:
                assign(job, node, "reserved")

    for job in queued:
        if job.job_id in taken:
            continue
        candidates = [
            n for n in nodes
            if n.free > 0 and admissible(n.windows, job.app_id, True, now, lead_time_s).admit
        ]
        if not candidates:
            if not any(n.free > 0 for n in nodes):
                break
            continue
        assign(job, min(candidates, key=lambda n: (n.busy, n.cpu, n.node_id)), "fifo")
    return decisions


class SchedulerService(Service):
    name = "scheduler"
    stateful = True
    Options = SchedulerOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        self.table = JobTable()
        self.allocations = AllocationManager()
        self.submitted = 0
        self._nodes: Dict[str, MembershipRecord] = {}
        self._tick_requested = False
        self.last_decisions: List[DispatchDecision] = []
        # job_id -> (attempt, deadline ms) for dispatches with no reply
        self._unconfirmed: Dict[str, Tuple[int, int]] = {}

    def on_start(self) -> None:
        self.every(self.options.tick_ms / 1000.0, "sched.tick")

    def export_state(self):
        return {
            "applications": [a.model_dump() for a in self.table.apps.values()],
            "jobs": [j.model_dump() for j in self.table.jobs.values()],
            "usage": [u.model_dump() for u in self.table.usage],
        }

    def restore_state(self, snapshot) -> None:
        self.table.restore(snapshot.applications, snapshot.jobs, snapshot.usage)
        self.submitted = len(self.table.jobs)
        logger.info(f"Restored {len(self.table.apps)} applications and {self.submitted} jobs")

    # ---------------------------------------------------------------- security

    def _principal(self, credentials: Credentials, resource: str, refusal=Unauthorized) -> Principal:
        return self.container.security.require(credentials, Action.SUBMIT, resource, refusal=refusal)

    def _owned(self, credentials: Credentials, app_id: str) -> ApplicationRecord:
        principal = self._principal(credentials, app_id)
        app = self.table.app(app_id)
        if principal.user_id != app.owner and "admin" not in principal.roles:
            raise Unauthorized()
        return app

    def _request_tick(self) -> None:
        if not self._tick_requested:
            self._tick_requested = True
            self.post_self("sched.tick")

    # ---------------------------------------------------------------- applications

    @handles("exec.app.register")
    def register_app(self, envelope: ServiceEnvelope) -> ApplicationRecord:
        call = parse_body(envelope.payload, RegisterApplication)
        principal = self._principal(call.credentials, "application", refusal=AuthFailed)
        record = self.table.register_app(ApplicationRecord(
            app_id=call.app_id,
            model=call.model,
            display_name=call.display_name,
            owner=principal.user_id,
            channels=call.channels,
            created_at=now_ms(),
        ))
        logger.info(f"Registered {record.model.value} application {record.app_id} for {record.owner}")
        self.mark_dirty(persist=True)
        return record

    @handles("exec.submit")
    def submit(self, envelope: ServiceEnvelope) -> SubmitAck:
        call = parse_body(envelope.payload, SubmitJobs)
        self._owned(call.credentials, call.app_id)
        specs = [
            s.model_copy(update={"max_attempts": min(s.max_attempts, self.options.max_attempts)})
            for s in call.jobs
        ]
        ids = self.table.submit(call.app_id, specs, now_ms(), get_operation_registry().names())
        self.submitted += len(ids)
        logger.info(f"Queued {len(ids)} jobs for application {call.app_id}")
        # durable before the ack
        self.mark_dirty(persist=True)
        if ids:
            self._request_tick()
        return SubmitAck(job_ids=ids)

    @handles("exec.app.status")
    def app_status(self, envelope: ServiceEnvelope) -> AppStatus:
        call = parse_body(envelope.payload, AppRef)
        app = self.table.app(call.app_id)
        return AppStatus(application=app, jobs=self.table.jobs_of(call.app_id), counts=self.table.counts(call.app_id))

    @handles("exec.app.stop")
    def stop_app(self, envelope: ServiceEnvelope) -> ApplicationRecord:
        call = parse_body(envelope.payload, AppRef)
        self._owned(call.credentials, call.app_id)
        for job in self.table.stop_app(call.app_id, now_ms()):
            self._propagate_abort(job)
        logger.info(f"Stopped application {call.app_id}")
        self.mark_dirty(persist=True)
        return self.table.app(call.app_id)

    @handles("exec.events")
    def events(self, envelope: ServiceEnvelope) -> EventsReply:
        call = parse_body(envelope.payload, EventsRequest)
        events = self.table.events_since(call.app_id, call.cursor)
        return EventsReply(
            events=events,
            cursor=call.cursor + len(events),
            app_state=self.table.app(call.app_id).state,
        )

    # ---------------------------------------------------------------- jobs

    @handles("exec.report")
    def report(self, envelope: ServiceEnvelope) -> None:
        report = parse_body(envelope.payload, JobReport)
        job = self.table.apply_report(report, now_ms())
        pending = self._unconfirmed.get(report.job_id)
        if pending is not None and pending[0] == report.attempt:
            del self._unconfirmed[report.job_id]
        if job is None:
            logger.debug(f"Dropped late report for job {report.job_id} attempt {report.attempt}")
            return None
        logger.info(
            f"Job {job.job_id} is {job.state.value}",
            extra={"job_id": job.job_id, "node_id": report.node_id, "transition": job.state.value},
        )
        self.mark_dirty(persist=job.state.terminal)
        self._request_tick()
        return None

    @handles("exec.abort")
    def abort(self, envelope: ServiceEnvelope) -> JobDescriptor:
        call = parse_body(envelope.payload, JobRef)
        job = self.table.get(call.job_id)
        self._owned(call.credentials, job.app_id)
        on_node = job.state in (JobState.STAGING, JobState.RUNNING)
        aborted = self.table.abort(call.job_id, now_ms())
        if on_node:
            self._propagate_abort(job)
        self.mark_dirty(persist=True)
        return aborted

    def _propagate_abort(self, job: JobDescriptor) -> None:
        if job.assigned_node is not None:
            self.container.post(job.assigned_node, EXECUTOR, "exec.abort", AbortOnNode(job_id=job.job_id, attempt=job.attempts))

    # ---------------------------------------------------------------- windows and stats

    @handles("res.sync")
    def sync_windows(self, envelope: ServiceEnvelope) -> None:
        if self.allocations.sync(parse_body(envelope.payload, WindowSync)):
            self._request_tick()
        return None

    @handles("exec.stats")
    def stats(self, envelope: ServiceEnvelope) -> SchedulerStats:
        nodes = [
            ExecutorSlotState(
                node_id=view.node_id,
                slots_total=view.slots_total,
                slots_busy=min(view.busy, view.slots_total),
                last_stats=self._nodes[view.node_id].last_stats,
            )
            for view in self._views()
        ]
        return SchedulerStats(
            jobs_by_state=self.table.counts(),
            submitted=self.submitted,
            nodes=nodes,
            completions_last_5min=self.table.completions_since(now_ms()),
            applications=len(self.table.apps),
            charged_seconds_by_node=charged_by_node(self.table.usage),
        )

    @handles("exec.usage")
    def usage(self, envelope: ServiceEnvelope) -> UsageReply:
        call = parse_body(envelope.payload, UsageRequest)
        records = [
            r for r in self.table.usage
            if (call.app_id is None or r.app_id == call.app_id) and (call.user_id is None or r.user_id == call.user_id)
        ]
        return UsageReply(
            records=records,
            charged_seconds=sum(r.charged_seconds for r in records),
            price=price(records, self.container.config.tariff),
        )

    # ---------------------------------------------------------------- tick

    def _views(self) -> List[NodeView]:
        busy: Dict[str, int] = {}
        for job in self.table.jobs.values():
            if job.state in (JobState.STAGING, JobState.RUNNING) and job.assigned_node:
                busy[job.assigned_node] = busy.get(job.assigned_node, 0) + 1
        return [
            node_view(record, busy.get(node_id, 0), self.allocations.windows_for(node_id))
            for node_id, record in sorted(self._nodes.items())
        ]

    def _refresh_nodes(self) -> bool:
        try:
            records = self.container.directory_client.query(EXECUTOR)
        except CloudError as e:
            logger.debug(f"Executor lookup failed: {e.code}")
            return False
        self._nodes = {r.node_id: r for r in records}
        self.container.learn_peers({r.node_id: r.endpoint for r in records})
        return True

    def _detect_lost(self, now: int) -> None:
        for job in list(self.table.jobs.values()):
            if job.state not in (JobState.STAGING, JobState.RUNNING) or job.assigned_node is None:
                continue
            record = self._nodes.get(job.assigned_node)
            incarnation = record.attributes.get("incarnation") if record else None
            restarted = (
                job.assigned_incarnation is not None
                and incarnation is not None
                and incarnation != job.assigned_incarnation
            )
            if record is None or restarted:
                requeued = self.table.node_lost(job.job_id, now)
                logger.info(
                    f"Node {job.assigned_node} lost; job {job.job_id} is {requeued.state.value}",
                    extra={"job_id": job.job_id, "node_id": job.assigned_node},
                )
                self.mark_dirty(persist=True)

    def _expire_unconfirmed(self, now: int) -> None:
        for job_id, (attempt, deadline) in list(self._unconfirmed.items()):
            job = self.table.jobs.get(job_id)
            if job is None or job.state != JobState.STAGING or job.attempts != attempt:
                del self._unconfirmed[job_id]
                continue
            if now < deadline:
                continue
            del self._unconfirmed[job_id]
            self._propagate_abort(job)
            requeued = self.table.node_lost(job_id, now, cause=UNCONFIRMED_CAUSE)
            logger.info(
                f"Dispatch of job {job_id} to {job.assigned_node} never confirmed; job is {requeued.state.value}",
                extra={"job_id": job_id, "node_id": job.assigned_node},
            )
            self.mark_dirty(persist=True)

    @handles("sched.tick")
    def tick(self, envelope: ServiceEnvelope) -> None:
        self._tick_requested = False
        if not self._refresh_nodes():
            return None
        now = now_ms()
        self._detect_lost(now)
        self._expire_unconfirmed(now)
        queued = self.table.queued_in_order()
        if not queued:
            return None
        decisions = plan_dispatch(queued, self._views(), now // 1000, self.options.lead_time_s)
        dispatched = []
        refused: Set[str] = set()
        for decision in decisions:
            if decision.node_id in refused:
                continue
            if self._dispatch(decision):
                dispatched.append(decision)
            else:
                refused.add(decision.node_id)
        self.last_decisions = dispatched
        if dispatched:
            self.mark_dirty()
        return None

    def _dispatch(self, decision: DispatchDecision) -> bool:
        """
        The job is recorded as staging on the node before the executor is
        asked, so a reply that arrives late never leaves a second copy queued.
        """
        record = self._nodes[decision.node_id]
        incarnation = record.attributes.get("incarnation")
        job = self.table.mark_dispatched(decision.job_id, decision.node_id, incarnation)
        try:
            body = self.container.call(
                decision.node_id, EXECUTOR, "exec.dispatch",
                DispatchJob(job=job, scheduler_node=self.node_id),
                timeout=DISPATCH_TIMEOUT_S,
            )
        except DispatchTimeout as e:
            # The executor may have accepted; its reports or the grace deadline settle it.
            deadline = now_ms() + int(self.options.dispatch_grace_s * 1000)
            self._unconfirmed[job.job_id] = (job.attempts, deadline)
            logger.info(f"Dispatch of {job.job_id} to {decision.node_id} unconfirmed: {e.code}")
            return False
        except CloudError as e:
            logger.info(f"Dispatch of {job.job_id} to {decision.node_id} failed: {e.code}")
            self.table.return_to_queue(job.job_id)
            return False
        reply = parse_body(body, DispatchReply)
        if not reply.accepted:
            logger.info(f"Executor {decision.node_id} refused job {job.job_id}: {reply.reason}")
            self.table.return_to_queue(job.job_id)
            return False
        logger.info(
            f"Dispatched job {job.job_id} attempt {decision.attempt} to {decision.node_id} ({decision.reason})",
            extra={"job_id": job.job_id, "node_id": decision.node_id, "decision": decision.reason},
        )
        return True

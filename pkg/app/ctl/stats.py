"""
Aggregate statistics of a running cloud.

CloudStats joins the membership catalogue (node state, dynamic samples),
the scheduler (slots, jobs by state, recent completions) and the
reservation service (active reservations) at one sampled instant.
"""
import logging
from typing import Any, Dict, List, Optional, Protocol

from pydantic import BaseModel, Field

from app.clock import now_ms
from app.container.wire import parse_body
from app.directory.schemas import MembershipRecord, NodeState, QueryReply, QueryRequest
from app.errors import CloudError
from app.execution.jobs import THROUGHPUT_WINDOW_MS
from app.execution.schemas import SchedulerStats
from app.reservation.schemas import ReservationStats

logger = logging.getLogger(__name__)


class ServiceCaller(Protocol):
    def call(self, service: str, kind: str, body: Any = None, timeout: Optional[float] = None) -> bytes:
        ...


class NodeStats(BaseModel):
    node_id: str
    endpoint: str
    state: NodeState
    services: List[str] = Field(default_factory=list)
    slots_busy: int = 0
    slots_total: int = 0
    cpu_usage_percent: float = 0.0
    available_memory_mb: int = 0
    total_memory_mb: int = 0


class CloudStats(BaseModel):
    sampled_at: int
    nodes: List[NodeStats] = Field(default_factory=list)
    nodes_alive: int = 0
    jobs_by_state: Dict[str, int] = Field(default_factory=dict)
    reservations_active: int = 0
    throughput_per_min: float = 0.0
    slots_busy: int = 0
    slots_total: int = 0


def build_cloud_stats(
    records: List[MembershipRecord],
    scheduler: Optional[SchedulerStats],
    reservations: Optional[ReservationStats],
    sampled_at: int,
) -> CloudStats:
    slots = {n.node_id: n for n in (scheduler.nodes if scheduler else [])}
    nodes = []
    for record in sorted(records, key=lambda r: r.node_id):
        slot = slots.get(record.node_id)
        nodes.append(NodeStats(
            node_id=record.node_id,
            endpoint=record.endpoint,
            state=record.state,
            services=record.services,
            slots_busy=slot.slots_busy if slot else 0,
            slots_total=slot.slots_total if slot else 0,
            cpu_usage_percent=record.last_stats.cpu_usage_percent,
            available_memory_mb=record.last_stats.available_memory_mb,
            total_memory_mb=record.static_profile.total_memory_mb,
        ))
    window_min = THROUGHPUT_WINDOW_MS / 60000
    return CloudStats(
        sampled_at=sampled_at,
        nodes=nodes,
        nodes_alive=sum(1 for n in nodes if n.state == NodeState.ALIVE),
        jobs_by_state=dict(scheduler.jobs_by_state) if scheduler else {},
        reservations_active=reservations.active if reservations else 0,
        throughput_per_min=(scheduler.completions_last_5min / window_min) if scheduler else 0.0,
        slots_busy=sum(n.slots_busy for n in nodes),
        slots_total=sum(n.slots_total for n in nodes),
    )


def _optional(caller: ServiceCaller, service: str, kind: str, model):
    try:
        return parse_body(caller.call(service, kind), model)
    except CloudError as e:
        logger.debug(f"{service} unavailable for stats: {e.code}")
        return None


def collect_stats(caller: ServiceCaller) -> CloudStats:
    """Directory is required; scheduler and reservation figures are optional."""
    records = parse_body(caller.call("directory", "dir.query", QueryRequest()), QueryReply).records
    return build_cloud_stats(
        records,
        _optional(caller, "scheduler", "exec.stats", SchedulerStats),
        _optional(caller, "reservation", "res.stats", ReservationStats),
        now_ms(),
    )


def format_stats(stats: CloudStats) -> str:
    lines = [
        f"{'NODE':<10} {'STATE':<8} {'SLOTS':>7} {'CPU%':>6} {'MEM MB':>13}  SERVICES",
    ]
    for node in stats.nodes:
        slots = f"{node.slots_busy}/{node.slots_total}" if node.slots_total else "-"
        memory = f"{node.available_memory_mb}/{node.total_memory_mb}"
        lines.append(
            f"{node.node_id[:8]:<10} {node.state.value:<8} {slots:>7} {node.cpu_usage_percent:>6.1f} "
            f"{memory:>13}  {','.join(node.services)}"
        )
    jobs = " ".join(f"{state}={n}" for state, n in sorted(stats.jobs_by_state.items()) if n) or "none"
    lines.append("")
    lines.append(f"nodes alive: {stats.nodes_alive}/{len(stats.nodes)}   slots: {stats.slots_busy}/{stats.slots_total}")
    lines.append(f"jobs: {jobs}")
    lines.append(f"reservations active: {stats.reservations_active}   throughput: {stats.throughput_per_min:.1f} jobs/min")
    return "\n".join(lines)

"""Security, accounting and snapshot types."""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.directory.schemas import MembershipRecord
from app.execution.schemas import ApplicationRecord, JobDescriptor
from app.reservation.schemas import AllocationEntry, Reservation, ReservationState
from app.storage.schemas import FileDescriptor
from app.transversal.identity import Action


class UsageRecord(BaseModel):
    user_id: str
    app_id: str
    job_id: str
    node_id: str
    attempt: int = 1
    started_at: int  # ms since epoch
    ended_at: int
    charged_seconds: float = Field(ge=0.0)


class CloudSnapshot(BaseModel):
    """Everything the master needs to resume after a crash."""

    snapshot_sequence: int = 0
    applications: List[ApplicationRecord] = Field(default_factory=list)
    jobs: List[JobDescriptor] = Field(default_factory=list)
    usage: List[UsageRecord] = Field(default_factory=list)
    reservations: List[Reservation] = Field(default_factory=list)
    allocations: Dict[str, List[AllocationEntry]] = Field(default_factory=dict)
    membership: List[MembershipRecord] = Field(default_factory=list)
    storage_catalogue: List[FileDescriptor] = Field(default_factory=list)

    def reference_errors(self) -> List[str]:
        """Cross-reference violations; an empty list means consistent."""
        problems: List[str] = []
        app_ids = {a.app_id for a in self.applications}
        for job in self.jobs:
            if job.app_id not in app_ids:
                problems.append(f"job {job.job_id} references unknown application {job.app_id}")
        live = {
            r.reservation_id: r
            for r in self.reservations
            if r.state in (ReservationState.CONFIRMED, ReservationState.ACTIVE)
        }
        for node_id, entries in self.allocations.items():
            for entry in entries:
                if entry.reservation_id not in live:
                    problems.append(f"allocation on {node_id} references dead reservation {entry.reservation_id}")
        return problems


class AuditEntry(BaseModel):
    user_id: Optional[str]
    action: Action
    allowed: bool


class UsageReply(BaseModel):
    records: List[UsageRecord] = Field(default_factory=list)
    charged_seconds: float = 0.0
    price: float = 0.0


class UsageRequest(BaseModel):
    app_id: Optional[str] = None
    user_id: Optional[str] = None

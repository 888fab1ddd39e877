"""Job, application and scheduling types."""
from enum import Enum
from typing import Dict, List, Optional
from uuid import uuid4

from pydantic import BaseModel, ConfigDict, Field

from app.fabric.schemas import DynamicStats
from app.storage.schemas import DataChannelSpec, FileDescriptor, StagingPlan
from app.transversal.identity import Credentials

# Bytes fields travel as base64 inside JSON bodies.
BYTES_AS_BASE64 = ConfigDict(ser_json_bytes="base64", val_json_bytes="base64")


class ProgrammingModel(str, Enum):
    TASK = "task"
    THREAD = "thread"
    MAPREDUCE = "mapreduce"


class JobState(str, Enum):
    CREATED = "created"
    QUEUED = "queued"
    STAGING = "staging"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    ABORTED = "aborted"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset({JobState.COMPLETED, JobState.FAILED, JobState.ABORTED})


class AppState(str, Enum):
    CREATED = "created"
    RUNNING = "running"
    STOPPED = "stopped"
    FINISHED = "finished"


class JobPayload(BaseModel):
    """A registered operation name plus its parameter bytes."""

    model_config = BYTES_AS_BASE64

    operation: str = Field(min_length=1)
    params: bytes = b""


class JobSpec(BaseModel):
    model_config = BYTES_AS_BASE64

    job_id: str = Field(default_factory=lambda: str(uuid4()))
    payload: JobPayload
    staging: StagingPlan = Field(default_factory=StagingPlan)
    max_attempts: int = Field(3, ge=1)


class JobDescriptor(BaseModel):
    model_config = BYTES_AS_BASE64

    job_id: str
    app_id: str
    model: ProgrammingModel = ProgrammingModel.TASK
    payload: JobPayload
    staging: StagingPlan = Field(default_factory=StagingPlan)
    state: JobState = JobState.CREATED
    assigned_node: Optional[str] = None
    assigned_incarnation: Optional[int] = None  # container start time of assigned_node
    attempts: int = Field(0, ge=0)
    max_attempts: int = Field(3, ge=1)
    result: Optional[bytes] = None
    failure_cause: Optional[str] = None
    outputs: List[FileDescriptor] = Field(default_factory=list)
    missing_outputs: List[str] = Field(default_factory=list)
    owner: str = "anonymous"
    enqueued_at: int = 0  # ms; FIFO key
    started_at: Optional[int] = None  # ms, set by the running report of the current attempt


class ApplicationRecord(BaseModel):
    app_id: str
    model: ProgrammingModel
    display_name: str = ""
    owner: str = "anonymous"
    channels: List[DataChannelSpec] = Field(default_factory=list)
    state: AppState = AppState.CREATED
    created_at: int = 0


# Envelope bodies
class RegisterApplication(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    app_id: str = Field(default_factory=lambda: str(uuid4()))
    model: ProgrammingModel
    display_name: str = ""
    channels: List[DataChannelSpec] = Field(default_factory=list)


class SubmitJobs(BaseModel):
    model_config = BYTES_AS_BASE64

    credentials: Credentials = Field(default_factory=Credentials)
    app_id: str
    jobs: List[JobSpec] = Field(default_factory=list)


class SubmitAck(BaseModel):
    job_ids: List[str]


class AppRef(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    app_id: str


class JobRef(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    job_id: str


class DispatchJob(BaseModel):
    model_config = BYTES_AS_BASE64

    job: JobDescriptor
    scheduler_node: str


class DispatchReply(BaseModel):
    accepted: bool
    reason: Optional[str] = None


class JobReport(BaseModel):
    model_config = BYTES_AS_BASE64

    job_id: str
    attempt: int
    node_id: str
    state: JobState
    result: Optional[bytes] = None
    failure_cause: Optional[str] = None
    outputs: List[FileDescriptor] = Field(default_factory=list)
    missing_outputs: List[str] = Field(default_factory=list)
    started_at: Optional[int] = None
    ended_at: Optional[int] = None


class AbortOnNode(BaseModel):
    job_id: str
    attempt: int


class JobEvent(BaseModel):
    model_config = BYTES_AS_BASE64

    seq: int  # position in the application's event log
    unit_seq: int  # per-unit sequence, for dedup on the client
    job_id: str
    state: JobState
    at: int
    result: Optional[bytes] = None
    failure_cause: Optional[str] = None


class EventsRequest(BaseModel):
    app_id: str
    cursor: int = 0


class EventsReply(BaseModel):
    model_config = BYTES_AS_BASE64

    events: List[JobEvent] = Field(default_factory=list)
    cursor: int = 0
    app_state: AppState = AppState.CREATED


class AppStatus(BaseModel):
    model_config = BYTES_AS_BASE64

    application: ApplicationRecord
    jobs: List[JobDescriptor] = Field(default_factory=list)
    counts: Dict[str, int] = Field(default_factory=dict)


class ExecutorSlotState(BaseModel):
    node_id: str
    slots_total: int = Field(1, ge=1)
    slots_busy: int = Field(0, ge=0)
    last_stats: DynamicStats = Field(default_factory=DynamicStats)


class DispatchDecision(BaseModel):
    job_id: str
    node_id: str
    attempt: int
    reason: str  # "reserved" | "fifo"


class SchedulerStats(BaseModel):
    jobs_by_state: Dict[str, int] = Field(default_factory=dict)
    submitted: int = 0
    nodes: List[ExecutorSlotState] = Field(default_factory=list)
    completions_last_5min: int = 0
    applications: int = 0
    charged_seconds_by_node: Dict[str, float] = Field(default_factory=dict)


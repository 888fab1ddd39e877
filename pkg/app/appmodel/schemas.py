"""Client-side application types and the client configuration file."""
from pathlib import Path
from typing import Any, List, Optional
from uuid import uuid4

import yaml
from pydantic import BaseModel, Field, field_validator

from app.execution.schemas import BYTES_AS_BASE64, AppState, JobPayload, JobState, ProgrammingModel
from app.storage.schemas import DataChannelSpec, FileDescriptor, StagingPlan
from app.transversal.identity import Credentials


class ClientConfig(BaseModel):
    """
    Client configuration, a UTF-8 YAML file::

        master: 127.0.0.1:7000
        user_id: alice
        token: s3cret
        channels: [aftp://s3cret@127.0.0.1:7100/]
    """

    master: str
    user_id: str = "anonymous"
    token: str = ""
    channels: List[DataChannelSpec] = Field(default_factory=list)
    timeout_s: float = Field(10.0, gt=0)
    poll_interval_s: float = Field(0.1, gt=0)

    @field_validator("channels", mode="before")
    @classmethod
    def _parse_uris(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [DataChannelSpec.parse(v) if isinstance(v, str) else v for v in value]
        return value

    @property
    def credentials(self) -> Credentials:
        return Credentials(user_id=self.user_id, token=self.token)


def load_client_config(path: str) -> ClientConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return ClientConfig.model_validate(data)


class ApplicationDescriptor(BaseModel):
    app_id: str = Field(default_factory=lambda: str(uuid4()))
    model: ProgrammingModel
    display_name: str = ""
    credentials: Credentials = Field(default_factory=Credentials)
    channels: List[DataChannelSpec] = Field(default_factory=list)
    shared_inputs: List[FileDescriptor] = Field(default_factory=list)
    state: AppState = AppState.CREATED


class WorkUnit(BaseModel):
    """One unit of user work; its id is the id of the job that runs it."""

    model_config = BYTES_AS_BASE64

    unit_id: str = Field(default_factory=lambda: str(uuid4()))
    app_id: str = ""
    payload: JobPayload
    staging: StagingPlan = Field(default_factory=StagingPlan)
    max_attempts: int = Field(3, ge=1)
    state: JobState = JobState.CREATED
    last_seq: int = 0
    result: Optional[bytes] = None
    failure_cause: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.state.terminal

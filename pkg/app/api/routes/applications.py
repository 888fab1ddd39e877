"""
Applications and job submission.

    POST /applications                 register an application
    POST /applications/{app_id}/jobs   submit jobs to it
    GET  /applications/{app_id}        application, jobs and counts
"""
import base64
import json
from typing import Any, List, Optional

from fastapi import APIRouter, Depends
from pydantic import BaseModel, Field, model_validator

from app.api.deps import bearer_credentials, get_gateway
from app.api.gateway import CloudGateway
from app.execution.schemas import ApplicationRecord, AppStatus, JobPayload, JobSpec, ProgrammingModel, SubmitAck
from app.storage.schemas import DataChannelSpec, StagingPlan
from app.transversal.identity import Credentials

router = APIRouter(prefix="/applications", tags=["applications"])


class CreateApplication(BaseModel):
    model: ProgrammingModel = ProgrammingModel.TASK
    display_name: str = ""
    channels: List[str] = Field(default_factory=list)  # scheme://credentials@host:port/root


class JobSubmission(BaseModel):
    """One job; params are JSON (encoded for the operation) or raw base64."""

    job_id: Optional[str] = None
    operation: str = Field(min_length=1)
    params: Optional[Any] = None
    params_base64: Optional[str] = None
    staging: StagingPlan = Field(default_factory=StagingPlan)
    max_attempts: int = Field(3, ge=1)

    @model_validator(mode="after")
    def _one_params_form(self) -> "JobSubmission":
        if self.params is not None and self.params_base64 is not None:
            raise ValueError("give params or params_base64, not both")
        return self

    def to_spec(self) -> JobSpec:
        if self.params_base64 is not None:
            raw = base64.b64decode(self.params_base64)
        elif self.params is not None:
            raw = json.dumps(self.params).encode("utf-8")
        else:
            raw = b""
        fields = {"job_id": self.job_id} if self.job_id else {}
        return JobSpec(
            payload=JobPayload(operation=self.operation, params=raw),
            staging=self.staging,
            max_attempts=self.max_attempts,
            **fields,
        )


class SubmitBody(BaseModel):
    jobs: List[JobSubmission] = Field(min_length=1)


@router.post("", response_model=ApplicationRecord)
def create_application(
    body: CreateApplication,
    credentials: Credentials = Depends(bearer_credentials),
    gateway: CloudGateway = Depends(get_gateway),
) -> ApplicationRecord:
    channels = [DataChannelSpec.parse(uri) for uri in body.channels]
    return gateway.create_application(credentials, body.model, body.display_name, channels)


@router.post("/{app_id}/jobs", response_model=SubmitAck)
def submit_jobs(
    app_id: str,
    body: SubmitBody,
    credentials: Credentials = Depends(bearer_credentials),
    gateway: CloudGateway = Depends(get_gateway),
) -> SubmitAck:
    return gateway.submit(credentials, app_id, [job.to_spec() for job in body.jobs])


@router.get("/{app_id}", response_model=AppStatus)
def get_application(app_id: str, gateway: CloudGateway = Depends(get_gateway)) -> AppStatus:
    return gateway.application(app_id)

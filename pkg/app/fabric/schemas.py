"""Platform profile and provisioning types."""
from typing import List, Optional

from pydantic import BaseModel, Field

from app.transversal.identity import Credentials


class StaticProfile(BaseModel):
    """Hardware facts that do not change while the process lives."""

    cpu_count: int = Field(ge=1)
    cpu_frequency_mhz: int = Field(0, ge=0)  # 0 = unknown
    total_memory_mb: int = Field(ge=1)
    total_storage_mb: int = Field(0, ge=0)  # 0 = unknown
    os_name: str = ""


class DynamicStats(BaseModel):
    cpu_usage_percent: float = Field(0.0, ge=0.0, le=100.0)
    available_memory_mb: int = Field(0, ge=0)
    available_storage_mb: int = Field(0, ge=0)
    sampled_at: int = Field(0, ge=0)  # ms since epoch, UTC


class ProvisionRequest(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    count: int = Field(1, ge=1)
    required_services: List[str] = Field(default_factory=lambda: ["executor"])
    ttl_seconds: int = Field(0, ge=0)  # 0 = unbounded


class ProvisionedNode(BaseModel):
    node_id: str
    endpoint: str
    mode: str
    pid: Optional[int] = None
    services: List[str] = Field(default_factory=list)
    ttl_seconds: int = 0
    started_at: int = 0
    alive: bool = True


class ProvisionResult(BaseModel):
    endpoints: List[str]
    node_ids: List[str]


class ReleaseRequest(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    node_id: str


class ProvisionedReply(BaseModel):
    nodes: List[ProvisionedNode] = Field(default_factory=list)
    max_nodes: int = 0

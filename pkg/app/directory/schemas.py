"""Membership catalogue types."""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.fabric.schemas import DynamicStats, StaticProfile


class NodeState(str, Enum):
    ALIVE = "alive"
    SUSPECT = "suspect"
    DEAD = "dead"


class MembershipRecord(BaseModel):
    node_id: str
    endpoint: str
    services: List[str] = Field(default_factory=list)
    static_profile: StaticProfile
    last_stats: DynamicStats = Field(default_factory=DynamicStats)
    last_heartbeat_at: int = 0  # ms since epoch
    state: NodeState = NodeState.ALIVE
    # Capacity figures advertised by hosted services, e.g. {"slots_total": 4}
    attributes: Dict[str, int] = Field(default_factory=dict)
    last_sequence: int = 0


class Heartbeat(BaseModel):
    node_id: str
    services: List[str] = Field(default_factory=list)
    stats: DynamicStats = Field(default_factory=DynamicStats)
    sequence: int = Field(ge=0)
    attributes: Dict[str, int] = Field(default_factory=dict)


class HeartbeatAck(BaseModel):
    """Acknowledges a heartbeat and refreshes the sender's peer table."""

    peers: Dict[str, str] = Field(default_factory=dict)


class RegisterAck(BaseModel):
    node_id: str
    catalogue_size: int
    peers: Dict[str, str] = Field(default_factory=dict)


class QueryRequest(BaseModel):
    service: Optional[str] = None  # None = all


class QueryReply(BaseModel):
    records: List[MembershipRecord] = Field(default_factory=list)


class LeaveRequest(BaseModel):
    node_id: str


class Transition(BaseModel):
    node_id: str
    from_state: NodeState
    to_state: Optional[NodeState] = None  # None = purged
    at: int


class DiscoverReply(BaseModel):
    catalogue_node_id: str
    catalogue_endpoint: str

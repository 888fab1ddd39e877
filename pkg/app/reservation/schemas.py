"""Advance reservation types. Times are whole seconds since the epoch."""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.transversal.identity import Credentials


class TimeWindow(BaseModel):
    """Half-open interval [start, end)."""

    start: int
    end: int

    @model_validator(mode="after")
    def _ordered(self) -> "TimeWindow":
        if self.start >= self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")
        return self

    @property
    def duration_s(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end


class ReservationRequest(BaseModel):
    requester: str = "anonymous"
    node_count: int = Field(1, ge=1)
    earliest: int
    latest: int
    duration_s: int = Field(ge=1)
    required_services: List[str] = Field(default_factory=lambda: ["executor"])
    round: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _fits(self) -> "ReservationRequest":
        if self.earliest + self.duration_s > self.latest:
            raise ValueError("earliest + duration_s must not exceed latest")
        if "executor" not in self.required_services:
            raise ValueError("required_services must include 'executor'")
        return self


class ReservationState(str, Enum):
    CONFIRMED = "confirmed"
    ACTIVE = "active"
    EXPIRED = "expired"
    CANCELLED = "cancelled"


class Reservation(BaseModel):
    reservation_id: str
    node_ids: List[str]
    window: TimeWindow
    owner: str
    bound_app: Optional[str] = None
    state: ReservationState = ReservationState.CONFIRMED


class AllocationEntry(BaseModel):
    window: TimeWindow
    reservation_id: str


class CounterOffer(BaseModel):
    original_request: ReservationRequest
    proposed_window: TimeWindow
    proposed_node_count: int = Field(ge=1)
    round: int = Field(ge=0)


class Outcome(str, Enum):
    CONFIRMED = "confirmed"
    COUNTER_OFFER = "counter_offer"
    REJECTED = "rejected"


class ReservationDecision(BaseModel):
    outcome: Outcome
    reservation: Optional[Reservation] = None
    counter_offer: Optional[CounterOffer] = None
    reason: Optional[str] = None


class ReservationTransition(BaseModel):
    reservation_id: str
    from_state: ReservationState
    to_state: ReservationState


class NodeWindow(BaseModel):
    """One reserved window as seen by the node's allocation manager."""

    window: TimeWindow
    reservation_id: str
    bound_app: Optional[str] = None


class Admission(BaseModel):
    admit: bool
    reason: Optional[str] = None  # "reserved" | "unauthenticated" | "upcoming"


class WindowSync(BaseModel):
    version: int
    windows: Dict[str, List[NodeWindow]] = Field(default_factory=dict)


# Envelope bodies
class RequestCall(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    request: ReservationRequest


class AcceptCall(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    offer: CounterOffer


class ReservationRef(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    reservation_id: str


class BindCall(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    reservation_id: str
    app_id: str


class ReservationStats(BaseModel):
    by_state: Dict[str, int] = Field(default_factory=dict)
    active: int = 0
    map_version: int = 0

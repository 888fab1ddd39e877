"""
Reservation service: owns the global allocation map on the master, answers
res.* requests, drives reservation state with a one-second tick and pushes
per-node window copies to the scheduler and executors.
"""
import logging
from typing import List, Set

from pydantic import BaseModel, Field

from app.clock import now_s
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.errors import CloudError, Unauthenticated, Unauthorized
from app.reservation.book import DEFAULT_HORIZON_S, DEFAULT_MAX_ROUNDS, ReservationBook
from app.reservation.schemas import (
    AcceptCall,
    BindCall,
    Outcome,
    Reservation,
    ReservationDecision,
    ReservationRef,
    ReservationStats,
    ReservationState,
    RequestCall,
    WindowSync,
)
from app.transversal.identity import Action, Credentials

logger = logging.getLogger(__name__)

TICK_S = 1.0
FULL_PUSH_EVERY = 10


class ReservationOptions(BaseModel):
    horizon_s: int = Field(DEFAULT_HORIZON_S, ge=1)
    max_rounds: int = Field(DEFAULT_MAX_ROUNDS, ge=0)


class ReservationService(Service):
    name = "reservation"
    stateful = True
    Options = ReservationOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        self.book = ReservationBook(horizon_s=self.options.horizon_s, max_rounds=self.options.max_rounds)
        self._pushed_version = -1
        self._pushed_nodes: Set[str] = set()
        self._ticks = 0

    def on_start(self) -> None:
        self.every(TICK_S, "res.tick")

    def export_state(self):
        return {
            "reservations": [r.model_dump() for r in self.book.reservations.values()],
            "allocations": {
                node: [e.model_dump() for e in entries]
                for node, entries in self.book.allocations.windows.items()
            },
        }

    def restore_state(self, snapshot) -> None:
        self.book.restore(snapshot.reservations, snapshot.allocations)

    def _candidates(self, required_services: List[str]) -> List[str]:
        records = self.container.directory_client.query("executor")
        return [r.node_id for r in records if set(required_services) <= set(r.services)]

    def _owned(self, credentials: Credentials, reservation_id: str) -> Reservation:
        """The reservation, if the caller owns it or is an admin."""
        principal = self.container.security.require(
            credentials, Action.RESERVE, reservation_id, refusal=Unauthenticated
        )
        reservation = self.book.get(reservation_id)
        if principal.user_id != reservation.owner and "admin" not in principal.roles:
            logger.info(f"{principal.user_id} may not change reservation {reservation_id} of {reservation.owner}")
            raise Unauthorized()
        return reservation

    def _changed(self) -> None:
        self.mark_dirty(persist=True)
        self._push_windows()

    @handles("res.request")
    def request(self, envelope: ServiceEnvelope) -> ReservationDecision:
        call = parse_body(envelope.payload, RequestCall)
        principal = self.container.security.require(
            call.credentials, Action.RESERVE, "reservation", refusal=Unauthenticated
        )
        req = call.request.model_copy(update={"requester": principal.user_id})
        decision = self.book.request(req, self._candidates(req.required_services), now_s())
        if decision.outcome == Outcome.CONFIRMED:
            self._changed()
        return decision

    @handles("res.accept")
    def accept(self, envelope: ServiceEnvelope) -> ReservationDecision:
        call = parse_body(envelope.payload, AcceptCall)
        principal = self.container.security.require(
            call.credentials, Action.RESERVE, "reservation", refusal=Unauthenticated
        )
        offer = call.offer.model_copy(update={
            "original_request": call.offer.original_request.model_copy(update={"requester": principal.user_id})
        })
        decision = self.book.accept_counter(
            offer, self._candidates(offer.original_request.required_services), now_s()
        )
        if decision.outcome == Outcome.CONFIRMED:
            self._changed()
        return decision

    @handles("res.cancel")
    def cancel(self, envelope: ServiceEnvelope):
        call = parse_body(envelope.payload, ReservationRef)
        self._owned(call.credentials, call.reservation_id)
        reservation = self.book.cancel(call.reservation_id)
        self._changed()
        return reservation

    @handles("res.bind")
    def bind(self, envelope: ServiceEnvelope):
        call = parse_body(envelope.payload, BindCall)
        self._owned(call.credentials, call.reservation_id)
        reservation = self.book.bind(call.reservation_id, call.app_id)
        logger.info(f"Bound reservation {call.reservation_id} to application {call.app_id}")
        self._changed()
        return reservation

    @handles("res.get")
    def get(self, envelope: ServiceEnvelope):
        call = parse_body(envelope.payload, ReservationRef)
        return self.book.get(call.reservation_id)

    @handles("res.stats")
    def stats(self, envelope: ServiceEnvelope) -> ReservationStats:
        by_state = {s.value: 0 for s in ReservationState}
        for r in self.book.reservations.values():
            by_state[r.state.value] += 1
        return ReservationStats(
            by_state=by_state,
            active=by_state[ReservationState.ACTIVE.value],
            map_version=self.book.version,
        )

    @handles("res.tick")
    def tick(self, envelope: ServiceEnvelope) -> None:
        for t in self.book.tick(now_s()):
            logger.info(
                f"Reservation {t.reservation_id}: {t.from_state.value} -> {t.to_state.value}",
                extra={"transition": f"{t.from_state.value}->{t.to_state.value}"},
            )
            self.mark_dirty()
        if self.book.prune(now_s()):
            self.mark_dirty(persist=True)
        self._ticks += 1
        if self.book.version != self._pushed_version or self._ticks % FULL_PUSH_EVERY == 0:
            self._push_windows()

    def _push_windows(self) -> None:
        """Send the current per-node windows to the scheduler and to every affected executor."""
        view = self.book.node_windows()
        update = WindowSync(version=self.book.version, windows=view)
        try:
            scheduler_node = self.container.locate("scheduler")
            self.container.post(scheduler_node, "scheduler", "res.sync", update)
        except CloudError as e:
            logger.debug(f"No scheduler to sync windows with: {e.code}")
        for node_id in sorted(set(view) | self._pushed_nodes):
            own = WindowSync(version=self.book.version, windows={node_id: view.get(node_id, [])})
            self.container.post(node_id, "executor", "res.sync", own)
        self._pushed_nodes = set(view)
        self._pushed_version = self.book.version

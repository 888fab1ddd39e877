"""Client side of the reservation service, including the negotiation loop."""
import logging
from typing import Optional

from app.appmodel.client import CloudClient
from app.container.wire import parse_body
from app.reservation.schemas import (
    AcceptCall,
    BindCall,
    CounterOffer,
    Outcome,
    RequestCall,
    Reservation,
    ReservationDecision,
    ReservationRef,
    ReservationRequest,
)

logger = logging.getLogger(__name__)

SERVICE = "reservation"
MAX_ROUNDS = 3


class ReservationClient:
    def __init__(self, client: CloudClient):
        self.client = client

    def request(self, request: ReservationRequest) -> ReservationDecision:
        body = self.client.call(SERVICE, "res.request", RequestCall(credentials=self.client.credentials, request=request))
        return parse_body(body, ReservationDecision)

    def accept(self, offer: CounterOffer) -> ReservationDecision:
        body = self.client.call(SERVICE, "res.accept", AcceptCall(credentials=self.client.credentials, offer=offer))
        return parse_body(body, ReservationDecision)

    def negotiate(self, request: ReservationRequest, max_rounds: int = MAX_ROUNDS) -> ReservationDecision:
        """Request, then accept counter-offers until confirmed, rejected or out of rounds."""
        decision = self.request(request)
        rounds = 0
        while decision.outcome == Outcome.COUNTER_OFFER and rounds < max_rounds:
            offer = decision.counter_offer
            logger.info(f"Accepting counter-offer [{offer.proposed_window.start}, {offer.proposed_window.end}) round {offer.round}")
            decision = self.accept(offer)
            rounds += 1
        return decision

    def cancel(self, reservation_id: str) -> Reservation:
        body = self.client.call(SERVICE, "res.cancel", ReservationRef(credentials=self.client.credentials, reservation_id=reservation_id))
        return parse_body(body, Reservation)

    def bind(self, reservation_id: str, app_id: str) -> Reservation:
        body = self.client.call(
            SERVICE, "res.bind",
            BindCall(credentials=self.client.credentials, reservation_id=reservation_id, app_id=app_id),
        )
        return parse_body(body, Reservation)

    def get(self, reservation_id: str, timeout: Optional[float] = None) -> Reservation:
        body = self.client.call(SERVICE, "res.get", ReservationRef(reservation_id=reservation_id), timeout)
        return parse_body(body, Reservation)

"""
POST /reservations: advance reservation with negotiation.

200 with the reservation when confirmed, 409 with the counter-offer when the
window is taken but another one fits, 422 when nothing fits.
"""
from fastapi import APIRouter, Depends
from fastapi.responses import JSONResponse

from app.api.deps import bearer_credentials, get_gateway
from app.api.gateway import CloudGateway
from app.reservation.schemas import Outcome, ReservationRequest
from app.transversal.identity import Credentials

router = APIRouter(tags=["reservations"])

_STATUS = {Outcome.CONFIRMED: 200, Outcome.COUNTER_OFFER: 409, Outcome.REJECTED: 422}


@router.post("/reservations")
def create_reservation(
    request: ReservationRequest,
    credentials: Credentials = Depends(bearer_credentials),
    gateway: CloudGateway = Depends(get_gateway),
) -> JSONResponse:
    decision = gateway.reserve(credentials, request)
    if decision.outcome == Outcome.CONFIRMED:
        content = decision.reservation.model_dump(mode="json")
    elif decision.outcome == Outcome.COUNTER_OFFER:
        content = decision.counter_offer.model_dump(mode="json")
    else:
        content = {"code": "Rejected", "message": decision.reason or "no feasible window"}
    return JSONResponse(status_code=_STATUS[decision.outcome], content=content)

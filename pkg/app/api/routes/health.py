"""
GET /health: container and service liveness.

Returns the state of every service hosted by the container serving the API
and whether it has joined a membership catalogue, so monitoring tools can
poll it instead of running ``ctl stats``.
"""
from typing import Dict

from fastapi import APIRouter, Depends
from pydantic import BaseModel

from app.api.deps import get_gateway
from app.api.gateway import CloudGateway
from app.container.service import ServiceState

router = APIRouter()


class HealthResponse(BaseModel):
    status: str  # "healthy" | "degraded" | "unhealthy"
    node_id: str
    registered: bool
    services: Dict[str, str]


@router.get("/health", response_model=HealthResponse, tags=["operations"])
def health_check(gateway: CloudGateway = Depends(get_gateway)) -> HealthResponse:
    """Returns 200 even when some services are down; inspect ``status``."""
    info = gateway.info()
    services = {r.name: r.state.value for r in info.services}
    started = [s == ServiceState.STARTED.value for s in services.values()]
    if all(started) and info.registered:
        status = "healthy"
    elif any(started):
        status = "degraded"
    else:
        status = "unhealthy"
    return HealthResponse(status=status, node_id=info.node_id, registered=info.registered, services=services)

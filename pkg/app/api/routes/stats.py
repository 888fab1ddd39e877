"""GET /stats: aggregate cloud statistics, read-only."""
from fastapi import APIRouter, Depends

from app.api.deps import get_gateway
from app.api.gateway import CloudGateway
from app.ctl.stats import CloudStats

router = APIRouter(tags=["monitoring"])


@router.get("/stats", response_model=CloudStats)
def get_stats(gateway: CloudGateway = Depends(get_gateway)) -> CloudStats:
    return gateway.stats()

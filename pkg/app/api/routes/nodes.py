"""GET /nodes: the membership catalogue."""
from typing import List

from fastapi import APIRouter, Depends

from app.api.deps import get_gateway
from app.api.gateway import CloudGateway
from app.directory.schemas import MembershipRecord

router = APIRouter(tags=["monitoring"])


@router.get("/nodes", response_model=List[MembershipRecord])
def list_nodes(gateway: CloudGateway = Depends(get_gateway)) -> List[MembershipRecord]:
    return gateway.nodes()

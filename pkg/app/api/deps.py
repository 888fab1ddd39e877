"""Request dependencies shared by the routers."""
from typing import Optional

from fastapi import Header, Request

from app.api.gateway import CloudGateway
from app.errors import Unauthenticated
from app.transversal.identity import Credentials


def get_gateway(request: Request) -> CloudGateway:
    return request.app.state.gateway


def bearer_credentials(authorization: Optional[str] = Header(default=None)) -> Credentials:
    """``Authorization: Bearer <user_id>:<token>``; required on mutating verbs."""
    if not authorization:
        raise Unauthenticated("missing bearer credentials")
    scheme, _, value = authorization.partition(" ")
    if scheme.lower() != "bearer" or not value.strip():
        raise Unauthenticated("expected a Bearer authorization header")
    user_id, _, token = value.strip().partition(":")
    if not user_id:
        raise Unauthenticated("bearer credentials name no user")
    return Credentials(user_id=user_id, token=token)

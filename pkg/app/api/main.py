"""
deskcloud HTTP API

A small FastAPI surface over a running cloud:
  POST /applications, POST /applications/{id}/jobs, GET /applications/{id}
  POST /reservations
  GET /nodes, GET /stats, GET /health

It is served by the ``api`` service inside a container (see ApiService);
``create_app(gateway)`` builds the application for any container, which is
also how the tests drive it with TestClient.
"""
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.api.gateway import CloudGateway
from app.api.routes import applications, health, nodes, reservations, stats
from app.errors import (
    AppStopped,
    CloudError,
    Denied,
    DispatchTimeout,
    IllegalTransition,
    InvalidRequest,
    UnknownApplication,
    UnknownJob,
    UnknownNode,
    UnknownOperation,
    UnknownReservation,
    UnknownService,
)

logger = logging.getLogger(__name__)

_STATUS_BY_ERROR = (
    (Denied, 401),
    ((UnknownApplication, UnknownJob, UnknownNode, UnknownReservation), 404),
    ((AppStopped, IllegalTransition), 409),
    ((InvalidRequest, UnknownOperation), 422),
    ((UnknownService, DispatchTimeout), 503),
)


def status_for(error: CloudError) -> int:
    for kinds, status in _STATUS_BY_ERROR:
        if isinstance(error, kinds):
            return status
    return 500


async def cloud_error_handler(request: Request, exc: CloudError) -> JSONResponse:
    status = status_for(exc)
    if status == 500:
        logger.error(f"{request.method} {request.url.path} failed: {exc.code}: {exc.message}")
    return JSONResponse(status_code=status, content=exc.to_payload())


async def value_error_handler(request: Request, exc: ValueError) -> JSONResponse:
    return JSONResponse(status_code=422, content={"code": "InvalidRequest", "message": str(exc)})


def create_app(gateway: CloudGateway) -> FastAPI:
    app = FastAPI(
        title="deskcloud API",
        description="Submission, reservation and monitoring for a desk-scale compute cloud",
        version="0.1.0",
    )
    app.state.gateway = gateway
    app.add_exception_handler(CloudError, cloud_error_handler)
    app.add_exception_handler(ValueError, value_error_handler)
    app.include_router(health.router)
    app.include_router(applications.router)
    app.include_router(reservations.router)
    app.include_router(nodes.router)
    app.include_router(stats.router)
    return app

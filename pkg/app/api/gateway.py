"""
CloudGateway: the HTTP surface's only way into the cloud.

Every method is one envelope operation sent through the hosting container,
so an HTTP request has exactly the effect of the same call made by a client.
"""
import logging
from typing import Any, List, Optional

from app.container.container import Container
from app.container.schemas import ContainerInfo
from app.container.wire import parse_body
from app.ctl.stats import CloudStats, collect_stats
from app.directory.schemas import MembershipRecord, QueryReply, QueryRequest
from app.execution.schemas import (
    ApplicationRecord,
    AppRef,
    AppStatus,
    JobSpec,
    ProgrammingModel,
    RegisterApplication,
    SubmitAck,
    SubmitJobs,
)
from app.reservation.schemas import RequestCall, ReservationDecision, ReservationRequest
from app.storage.schemas import DataChannelSpec
from app.transversal.identity import Credentials

logger = logging.getLogger(__name__)


class CloudGateway:
    def __init__(self, container: Container):
        self.container = container

    def call(self, service: str, kind: str, body: Any = None, timeout: Optional[float] = None) -> bytes:
        node_id = self.container.locate(service)
        return self.container.call(node_id, service, kind, body, timeout)

    def create_application(
        self,
        credentials: Credentials,
        model: ProgrammingModel,
        display_name: str = "",
        channels: Optional[List[DataChannelSpec]] = None,
    ) -> ApplicationRecord:
        body = self.call("scheduler", "exec.app.register", RegisterApplication(
            credentials=credentials, model=model, display_name=display_name, channels=channels or [],
        ))
        return parse_body(body, ApplicationRecord)

    def submit(self, credentials: Credentials, app_id: str, jobs: List[JobSpec]) -> SubmitAck:
        body = self.call("scheduler", "exec.submit", SubmitJobs(credentials=credentials, app_id=app_id, jobs=jobs))
        return parse_body(body, SubmitAck)

    def application(self, app_id: str) -> AppStatus:
        return parse_body(self.call("scheduler", "exec.app.status", AppRef(app_id=app_id)), AppStatus)

    def reserve(self, credentials: Credentials, request: ReservationRequest) -> ReservationDecision:
        body = self.call("reservation", "res.request", RequestCall(credentials=credentials, request=request))
        return parse_body(body, ReservationDecision)

    def nodes(self) -> List[MembershipRecord]:
        return parse_body(self.call("directory", "dir.query", QueryRequest()), QueryReply).records

    def stats(self) -> CloudStats:
        return collect_stats(self)

    def info(self) -> ContainerInfo:
        return self.container.info()

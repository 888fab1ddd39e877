"""
Directory service: hosts the Membership Catalogue on the catalogue node and
drives its failure-detection sweep from a timer on the same mailbox.
"""
import logging

from pydantic import BaseModel, Field

from app.clock import now_ms
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.directory.catalogue import DEAD_FACTOR, PURGE_FACTOR, SUSPECT_FACTOR, MembershipCatalogue
from app.directory.schemas import (
    Heartbeat,
    HeartbeatAck,
    LeaveRequest,
    MembershipRecord,
    NodeState,
    QueryReply,
    QueryRequest,
    RegisterAck,
)
from app.errors import LicenseRejected, StaleHeartbeat

logger = logging.getLogger(__name__)


class DirectoryOptions(BaseModel):
    suspect_factor: int = Field(SUSPECT_FACTOR, ge=1)
    dead_factor: int = Field(DEAD_FACTOR, ge=1)
    purge_factor: int = Field(PURGE_FACTOR, ge=1)


class DirectoryService(Service):
    name = "directory"
    stateful = True
    Options = DirectoryOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        config = container.config
        self.catalogue = MembershipCatalogue(
            heartbeat_interval_ms=config.heartbeat_interval_ms,
            suspect_factor=self.options.suspect_factor,
            dead_factor=self.options.dead_factor,
            purge_factor=self.options.purge_factor,
            license_max_nodes=config.license_max_nodes,
            license_allowed_services=config.license_allowed_services,
        )

    def on_start(self) -> None:
        self.every(self.container.config.heartbeat_interval_s, "dir.sweep")

    def export_state(self):
        return {"membership": [r.model_dump() for r in self.catalogue.records.values()]}

    def restore_state(self, snapshot) -> None:
        self.catalogue.restore(snapshot.membership, now_ms())

    @handles("dir.register")
    def register(self, envelope: ServiceEnvelope) -> RegisterAck:
        record = parse_body(envelope.payload, MembershipRecord)
        try:
            self.catalogue.register(record, now_ms())
        except LicenseRejected as e:
            logger.warning(f"Membership of {record.node_id} rejected: {e}")
            raise
        self.mark_dirty()
        return RegisterAck(
            node_id=record.node_id,
            catalogue_size=len(self.catalogue.records),
            peers=self.catalogue.peers(),
        )

    @handles("dir.heartbeat")
    def heartbeat(self, envelope: ServiceEnvelope) -> HeartbeatAck:
        hb = parse_body(envelope.payload, Heartbeat)
        try:
            before = self.catalogue.records.get(hb.node_id)
            after = self.catalogue.heartbeat(hb, now_ms())
        except StaleHeartbeat as e:
            logger.warning(f"Stale heartbeat from {hb.node_id}: {e}")
            raise
        if before is None or before.services != after.services or before.state != after.state:
            self.mark_dirty()
        return HeartbeatAck(peers=self.catalogue.peers())

    @handles("dir.query")
    def query(self, envelope: ServiceEnvelope) -> QueryReply:
        request = parse_body(envelope.payload, QueryRequest)
        return QueryReply(records=self.catalogue.query(request.service))

    @handles("dir.leave")
    def leave(self, envelope: ServiceEnvelope) -> None:
        request = parse_body(envelope.payload, LeaveRequest)
        if self.catalogue.leave(request.node_id):
            logger.info(f"{request.node_id} left the cloud", extra={"transition": "leave"})
            self.mark_dirty()

    @handles("dir.sweep")
    def sweep(self, envelope: ServiceEnvelope) -> None:
        for t in self.catalogue.sweep(now_ms()):
            to_state = t.to_state.value if t.to_state else "purged"
            log = logger.warning if t.to_state == NodeState.DEAD else logger.info
            log(
                f"{t.node_id}: {t.from_state.value} -> {to_state}",
                extra={"node": t.node_id, "transition": f"{t.from_state.value}->{to_state}"},
            )
            self.mark_dirty()

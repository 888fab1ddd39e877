"""
Membership Catalogue: the global directory of nodes, their services and
liveness.

Pure state machine; time is always passed in (ms since epoch). The directory
service owns one instance and feeds it serialized messages.
"""
import logging
from typing import Dict, Iterable, List, Optional

from app.directory.schemas import Heartbeat, MembershipRecord, NodeState, Transition
from app.errors import LicenseRejected, NodeNotRegistered, StaleHeartbeat

logger = logging.getLogger(__name__)

SUSPECT_FACTOR = 3
DEAD_FACTOR = 10
PURGE_FACTOR = 60


class MembershipCatalogue:
    def __init__(
        self,
        heartbeat_interval_ms: int = 1000,
        suspect_factor: int = SUSPECT_FACTOR,
        dead_factor: int = DEAD_FACTOR,
        purge_factor: int = PURGE_FACTOR,
        license_max_nodes: int = 0,
        license_allowed_services: Iterable[str] = (),
    ):
        self.suspect_timeout_ms = suspect_factor * heartbeat_interval_ms
        self.dead_timeout_ms = dead_factor * heartbeat_interval_ms
        self.purge_timeout_ms = purge_factor * heartbeat_interval_ms
        self.license_max_nodes = license_max_nodes
        self.license_allowed_services = frozenset(license_allowed_services)
        self.records: Dict[str, MembershipRecord] = {}

    def counted(self) -> int:
        """Records that count against the license: alive and suspect."""
        return sum(1 for r in self.records.values() if r.state != NodeState.DEAD)

    def _check_services(self, node_id: str, services: List[str]) -> None:
        if not self.license_allowed_services:
            return
        outside = sorted(set(services) - self.license_allowed_services)
        if outside:
            raise LicenseRejected(f"node {node_id} hosts unlicensed services: {', '.join(outside)}")

    def register(self, record: MembershipRecord, now: int) -> MembershipRecord:
        self._check_services(record.node_id, record.services)
        existing = self.records.get(record.node_id)
        rejoining = existing is not None and existing.state != NodeState.DEAD
        if not rejoining and self.license_max_nodes and self.counted() >= self.license_max_nodes:
            raise LicenseRejected(
                f"node {record.node_id} exceeds the licensed maximum of {self.license_max_nodes} nodes"
            )
        stored = record.model_copy(update={"state": NodeState.ALIVE, "last_heartbeat_at": now})
        self.records[record.node_id] = stored
        logger.info(
            f"Registered {record.node_id} at {record.endpoint} with {record.services}",
            extra={"transition": "register"},
        )
        return stored

    def heartbeat(self, hb: Heartbeat, now: int) -> MembershipRecord:
        record = self.records.get(hb.node_id)
        if record is None or record.state == NodeState.DEAD:
            raise NodeNotRegistered(f"node {hb.node_id} must register")
        if hb.sequence <= record.last_sequence:
            raise StaleHeartbeat(f"sequence {hb.sequence} not after {record.last_sequence}")
        self._check_services(hb.node_id, hb.services)
        if record.state == NodeState.SUSPECT:
            logger.info(f"{hb.node_id} back to alive", extra={"transition": "suspect->alive"})
        updated = record.model_copy(update={
            "services": list(hb.services),
            "last_stats": hb.stats,
            "attributes": dict(hb.attributes),
            "last_sequence": hb.sequence,
            "last_heartbeat_at": max(now, record.last_heartbeat_at),
            "state": NodeState.ALIVE,
        })
        self.records[hb.node_id] = updated
        return updated

    def query(self, service: Optional[str] = None) -> List[MembershipRecord]:
        return [
            self.records[node_id]
            for node_id in sorted(self.records)
            if self.records[node_id].state != NodeState.DEAD
            and (service is None or service in self.records[node_id].services)
        ]

    def sweep(self, now: int) -> List[Transition]:
        transitions: List[Transition] = []
        for node_id in sorted(self.records):
            record = self.records[node_id]
            silent = now - record.last_heartbeat_at
            state = record.state
            if state == NodeState.ALIVE and silent > self.suspect_timeout_ms:
                transitions.append(Transition(node_id=node_id, from_state=state, to_state=NodeState.SUSPECT, at=now))
                state = NodeState.SUSPECT
            if state == NodeState.SUSPECT and silent > self.dead_timeout_ms:
                transitions.append(Transition(node_id=node_id, from_state=state, to_state=NodeState.DEAD, at=now))
                state = NodeState.DEAD
            if state == NodeState.DEAD and silent > self.purge_timeout_ms:
                transitions.append(Transition(node_id=node_id, from_state=state, to_state=None, at=now))
                del self.records[node_id]
                continue
            if state != record.state:
                self.records[node_id] = record.model_copy(update={"state": state})
        return transitions

    def leave(self, node_id: str) -> bool:
        return self.records.pop(node_id, None) is not None

    def peers(self) -> Dict[str, str]:
        return {r.node_id: r.endpoint for r in self.records.values() if r.state != NodeState.DEAD}

    def restore(self, records: Iterable[MembershipRecord], now: int) -> None:
        """Reload records after a restart; everyone gets a fresh grace period."""
        self.records = {
            r.node_id: r.model_copy(update={"last_heartbeat_at": now})
            for r in records
            if r.state != NodeState.DEAD
        }

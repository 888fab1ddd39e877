"""
Discovery and heartbeat client run by every container.

Joins the cloud through the seed list, registers with the catalogue, then
heartbeats every interval. While disconnected it rediscovers every 10
heartbeat intervals.
"""
import logging
import threading
from typing import TYPE_CHECKING, List, Optional

from app.clock import now_ms
from app.container.wire import ServiceEnvelope, parse_body
from app.directory.schemas import (
    DiscoverReply,
    Heartbeat,
    HeartbeatAck,
    LeaveRequest,
    MembershipRecord,
    QueryReply,
    QueryRequest,
    RegisterAck,
)
from app.errors import (
    CloudError,
    LicenseRejected,
    NoCatalogue,
    NodeNotRegistered,
    NoSeedReachable,
    StaleHeartbeat,
)

if TYPE_CHECKING:
    from app.container.container import Container

logger = logging.getLogger(__name__)

DIRECTORY = "directory"
REDISCOVER_INTERVALS = 10
MISSED_BEFORE_DISCONNECT = 3


def discover(container: "Container", seed_peers: List[str], per_seed_timeout_s: float) -> DiscoverReply:
    """Ask each seed in order for the catalogue location; first answer wins."""
    for seed in seed_peers:
        envelope = ServiceEnvelope(
            source_node=container.node_id,
            target_node="*",
            target_service="container",
            kind="sys.discover",
        )
        try:
            reply = container.request_endpoint(seed, envelope, per_seed_timeout_s)
            reply.raise_for_error()
            found = parse_body(reply.payload, DiscoverReply)
            logger.info(f"Seed {seed} points to catalogue {found.catalogue_node_id} at {found.catalogue_endpoint}")
            return found
        except CloudError as e:
            logger.info(f"Seed {seed} did not answer discovery: {e.code}")
    raise NoSeedReachable(f"none of {len(seed_peers)} seeds answered")


class DirectoryClient:
    def __init__(self, container: "Container"):
        self.container = container
        self.catalogue_node: Optional[str] = None
        self.catalogue_endpoint: Optional[str] = None
        self.registered = False
        self.license_rejected = False
        self._sequence = now_ms()
        self._missed = 0
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._thread: Optional[threading.Thread] = None

    @property
    def interval_s(self) -> float:
        return self.container.config.heartbeat_interval_s

    @property
    def call_timeout_s(self) -> float:
        return max(1.0, 3 * self.interval_s)

    def start(self) -> None:
        if self.container.hosts_service(DIRECTORY):
            self.catalogue_node = self.container.node_id
            self.catalogue_endpoint = self.container.endpoint
        elif not self.container.config.seed_peers:
            logger.info("No seed peers and no local directory: running detached")
            return
        self._thread = threading.Thread(
            target=self._loop, name=f"{self.container.node_id[:8]}-heartbeat", daemon=True
        )
        self._thread.start()

    def stop(self, leave: bool = True) -> None:
        self._stop.set()
        self._wake.set()
        if leave and self.registered and self.catalogue_node:
            try:
                self.container.call(
                    self.catalogue_node, DIRECTORY, "dir.leave",
                    LeaveRequest(node_id=self.container.node_id), timeout=1.0,
                )
            except CloudError as e:
                logger.info(f"Leave not acknowledged: {e.code}")
        self.registered = False
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=self.call_timeout_s + 1)

    def beat_now(self) -> None:
        """Heartbeat ahead of schedule, e.g. after the service list changed."""
        self._wake.set()

    def _loop(self) -> None:
        while not self._stop.is_set():
            wait = self.interval_s
            try:
                if not self.registered:
                    self._join()
                self._beat()
                self._missed = 0
            except LicenseRejected as e:
                logger.error(f"Membership rejected by license: {e}")
                self.license_rejected = True
                self.registered = False
                wait = REDISCOVER_INTERVALS * self.interval_s
            except (StaleHeartbeat, NodeNotRegistered) as e:
                logger.info(f"Re-registering after {e.code}")
                self.registered = False
                wait = 0
            except CloudError as e:
                self._missed += 1
                if self.catalogue_node is None or self._missed >= MISSED_BEFORE_DISCONNECT:
                    if self.registered:
                        logger.warning(f"Lost the catalogue ({e.code}); rediscovering")
                    self.registered = False
                    if not self.container.hosts_service(DIRECTORY):
                        self.catalogue_node = None
                        self.catalogue_endpoint = None
                    wait = REDISCOVER_INTERVALS * self.interval_s
            self._wake.wait(wait)
            self._wake.clear()

    def _join(self) -> None:
        if self.catalogue_node is None:
            found = discover(self.container, self.container.config.seed_peers, self.call_timeout_s)
            self.catalogue_node = found.catalogue_node_id
            self.catalogue_endpoint = found.catalogue_endpoint
            self.container.learn_peer(found.catalogue_node_id, found.catalogue_endpoint)
        record = MembershipRecord(
            node_id=self.container.node_id,
            endpoint=self.container.endpoint,
            services=self.container.advertised_services(),
            static_profile=self.container.static_profile,
            last_stats=self.container.profiler.sample_dynamic(),
            attributes=self.container.advertised_attributes(),
            last_sequence=self._next_sequence(),
        )
        ack = self.container.call(self.catalogue_node, DIRECTORY, "dir.register", record, timeout=self.call_timeout_s)
        self.container.learn_peers(parse_body(ack, RegisterAck).peers)
        self.registered = True
        self.license_rejected = False
        logger.info(f"Joined cloud via catalogue {self.catalogue_node}")

    def _beat(self) -> None:
        hb = Heartbeat(
            node_id=self.container.node_id,
            services=self.container.advertised_services(),
            stats=self.container.profiler.sample_dynamic(),
            sequence=self._next_sequence(),
            attributes=self.container.advertised_attributes(),
        )
        body = self.container.call(self.catalogue_node, DIRECTORY, "dir.heartbeat", hb, timeout=self.call_timeout_s)
        self.container.learn_peers(parse_body(body, HeartbeatAck).peers)

    def _next_sequence(self) -> int:
        self._sequence += 1
        return self._sequence

    def query(self, service: Optional[str] = None, timeout: Optional[float] = None) -> List[MembershipRecord]:
        if self.catalogue_node is None:
            raise NoCatalogue("this node has not joined a catalogue")
        body = self.container.call(
            self.catalogue_node, DIRECTORY, "dir.query", QueryRequest(service=service),
            timeout=timeout or self.call_timeout_s,
        )
        return parse_body(body, QueryReply).records

"""
CloudClient: how user programs reach the cloud.

The client is a container that hosts no services and does not listen; it
speaks the same envelope protocol to the master.
"""
import logging
from typing import Any, Dict, List, Optional

from app.appmodel.schemas import ClientConfig
from app.container.config import ContainerConfig
from app.container.container import ANY_NODE, CONTAINER_SERVICE, Container
from app.container.schemas import ContainerInfo
from app.container.service import ServiceState
from app.container.wire import ServiceEnvelope, encode_body, parse_body
from app.directory.schemas import DiscoverReply, QueryReply, QueryRequest
from app.errors import CloudError, UnknownService
from app.storage.schemas import DataChannelSpec, LocateReply

logger = logging.getLogger(__name__)


class CloudClient:
    def __init__(self, config: ClientConfig):
        self.config = config
        self.credentials = config.credentials
        self.container = Container(
            ContainerConfig(dispatch_timeout_s=config.timeout_s, log_level=None),
            serve=False,
        )
        self.master_node: Optional[str] = None
        self._located: Dict[str, str] = {}

    @classmethod
    def connect(cls, master: str, user_id: str = "anonymous", token: str = "", **kwargs) -> "CloudClient":
        return cls(ClientConfig(master=master, user_id=user_id, token=token, **kwargs)).open()

    def open(self) -> "CloudClient":
        self.container.start()
        try:
            info = self.info()
        except CloudError:
            self.close()
            raise
        self.master_node = info.node_id
        self.container.learn_peer(info.node_id, self.config.master)
        logger.info(f"Connected to master {info.node_id} at {self.config.master}")
        return self

    def close(self) -> None:
        self.container.stop(drain=False)

    def __enter__(self) -> "CloudClient":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    def container_verb(self, endpoint: str, kind: str, body: Any = None) -> bytes:
        """Send a built-in ``sys.*`` verb to whatever container listens on ``endpoint``."""
        envelope = ServiceEnvelope(
            source_node=self.container.node_id,
            target_node=ANY_NODE,
            target_service=CONTAINER_SERVICE,
            kind=kind,
            payload=encode_body(body),
        )
        reply = self.container.request_endpoint(endpoint, envelope, self.config.timeout_s)
        reply.raise_for_error()
        return reply.payload

    def _master_verb(self, kind: str) -> bytes:
        return self.container_verb(self.config.master, kind)

    def info(self) -> ContainerInfo:
        return parse_body(self._master_verb("sys.info"), ContainerInfo)

    def locate(self, service: str) -> str:
        """Node hosting ``service``: the master if it does, else the catalogue's first live host."""
        if service in self._located:
            return self._located[service]
        info = self.info()
        if any(r.name == service and r.state == ServiceState.STARTED for r in info.services):
            node_id = info.node_id
        else:
            found = parse_body(self._master_verb("sys.discover"), DiscoverReply)
            self.container.learn_peer(found.catalogue_node_id, found.catalogue_endpoint)
            body = self.container.call(found.catalogue_node_id, "directory", "dir.query", QueryRequest(service=service))
            records = parse_body(body, QueryReply).records
            if not records:
                raise UnknownService(f"no live node hosts {service!r}")
            node_id = records[0].node_id
            self.container.learn_peer(node_id, records[0].endpoint)
        self._located[service] = node_id
        return node_id

    def call(self, service: str, kind: str, body: Any = None, timeout: Optional[float] = None) -> bytes:
        node_id = self.locate(service)
        try:
            return self.container.call(node_id, service, kind, body, timeout)
        except CloudError as e:
            if e.code in ("UnknownService", "PeerUnreachable"):
                self._located.pop(service, None)
            raise

    def channels(self) -> List[DataChannelSpec]:
        """Configured channels, or the storage service's channel when none are configured."""
        if self.config.channels:
            return list(self.config.channels)
        return [parse_body(self.call("storage", "sto.locate"), LocateReply).channel]

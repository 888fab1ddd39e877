"""
The container: the deployment unit hosting named services.

Startup: bind the listener, profile the platform, instantiate every manifest
service (nothing starts if any fails), restore persisted state, start services
in manifest order, then begin discovery and heartbeats. Stop runs the reverse.
"""
import logging
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Any, Dict, List, Optional

from app.clock import now_ms
from app.container import transport
from app.container.config import ContainerConfig, split_endpoint
from app.container.registry import ServiceCatalog, default_catalog
from app.container.schemas import ContainerInfo, InstallRequest, StopRequest, UninstallRequest
from app.container.service import Service, ServiceHost, ServiceRegistration, ServiceState
from app.container.wire import ServiceEnvelope, encode_body, parse_body
from app.directory.client import DirectoryClient
from app.directory.schemas import DiscoverReply
from app.errors import (
    AlreadyInstalled,
    BindFailure,
    CloudError,
    DispatchTimeout,
    InvalidRequest,
    NoCatalogue,
    NotInstalled,
    ServiceLoadFailure,
    StoreCorrupt,
    Unauthorized,
    UnknownNode,
    UnknownService,
)
from app.fabric.profiler import Profiler
from app.fabric.schemas import StaticProfile
from app.transversal.identity import Action
from app.transversal.persistence import SnapshotCoordinator, build_provider
from app.transversal.security import SecurityProvider, build_security_provider

logger = logging.getLogger(__name__)

CONTAINER_SERVICE = "container"
ANY_NODE = "*"


class Container:
    def __init__(
        self,
        config: ContainerConfig,
        catalog: Optional[ServiceCatalog] = None,
        serve: bool = True,
    ):
        self.config = config
        self.node_id = config.node_id
        self.incarnation = now_ms()
        self.catalog = catalog or default_catalog
        self.serve = serve
        self.endpoint = config.advertise_endpoint or config.listen_endpoint
        self.profiler = Profiler()
        self.static_profile: Optional[StaticProfile] = None
        self.security: SecurityProvider = build_security_provider(config.security_provider, config.credential_file)
        self.snapshots = SnapshotCoordinator(build_provider(config.persistence_provider, config.persistence_path))
        self.directory_client = DirectoryClient(self)
        self.running = False
        self.restored_snapshot = None

        self._hosts: "OrderedDict[str, ServiceHost]" = OrderedDict()
        self._peers: Dict[str, str] = {}
        self._peers_lock = threading.Lock()
        self._admin_lock = threading.RLock()
        self._stopped = threading.Event()
        self._poster = ThreadPoolExecutor(max_workers=8, thread_name_prefix=f"{self.node_id[:8]}-post")
        self._server: Optional[transport.EnvelopeServer] = None
        self._server_thread: Optional[threading.Thread] = None
        self._ttl_timer: Optional[threading.Timer] = None

    # ------------------------------------------------------------------ lifecycle

    def start(self) -> "Container":
        if self.serve:
            self._bind()
        self.static_profile = self.profiler.read_static()

        try:
            services = self._instantiate(self.config.service_manifest)
            self._restore(services)
            started: List[ServiceHost] = []
            for service in services:
                host = ServiceHost(service, self)
                self._hosts[service.name] = host
                try:
                    host.start()
                except Exception as e:
                    logger.error(f"Service {service.name} failed to start: {e}")
                    for running in reversed(started):
                        running.stop()
                    self._hosts.clear()
                    raise ServiceLoadFailure(f"service {service.name!r} failed to start", cause=str(e))
                started.append(host)
        except Exception:
            self._close_server()
            raise

        if self._server is not None:
            self._server_thread = threading.Thread(
                target=self._server.serve_forever, name=f"{self.node_id[:8]}-listener", daemon=True
            )
            self._server_thread.start()
        self.running = True
        if any(h.service.stateful for h in self._hosts.values()):
            self.snapshots.start_periodic(self.config.snapshot_interval_s)
        self.directory_client.start()
        if self.config.ttl_seconds:
            self._ttl_timer = threading.Timer(self.config.ttl_seconds, self._expire)
            self._ttl_timer.daemon = True
            self._ttl_timer.start()
        logger.info(f"Container {self.node_id} up at {self.endpoint} with {self.advertised_services()}")
        return self

    def _bind(self) -> None:
        host, port = split_endpoint(self.config.listen_endpoint)
        try:
            self._server = transport.EnvelopeServer((host, port), self)
        except OSError as e:
            raise BindFailure(f"cannot bind {self.config.listen_endpoint}", cause=str(e))
        if not self.config.advertise_endpoint:
            advertised_host = "127.0.0.1" if host in ("0.0.0.0", "") else host
            self.endpoint = f"{advertised_host}:{self._server.server_address[1]}"

    def _instantiate(self, manifest) -> List[Service]:
        names = [spec.name for spec in manifest]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ServiceLoadFailure(f"duplicate services in manifest: {', '.join(duplicates)}")
        services = []
        for spec in manifest:
            service_cls = self.catalog.get(spec.name)
            try:
                services.append(service_cls(self, spec.options))
            except Exception as e:
                raise ServiceLoadFailure(f"service {spec.name!r} rejected its options", cause=str(e))
        return services

    def _restore(self, services: List[Service]) -> None:
        if not any(s.stateful for s in services):
            return
        try:
            snapshot = self.snapshots.restore()
        except StoreCorrupt as e:
            logger.error(f"Starting empty: {e}")
            return
        self.restored_snapshot = snapshot
        if snapshot is not None:
            for service in services:
                if service.stateful:
                    service.restore_state(snapshot)

    def stop(self, drain: bool = True) -> None:
        """Graceful stop: leave the cloud, drain and stop services in reverse order, persist."""
        if self._stopped.is_set():
            return
        self._stopped.set()
        self.running = False
        if self._ttl_timer is not None:
            self._ttl_timer.cancel()
        self.directory_client.stop(leave=True)
        with self._admin_lock:
            for name in reversed(list(self._hosts)):
                host = self._hosts[name]
                if drain:
                    try:
                        host.drain(self.config.drain_window_s)
                    except CloudError as e:
                        logger.warning(f"Stopping {name} without a full drain: {e}")
                host.stop()
            stateful = any(h.service.stateful for h in self._hosts.values())
            self._hosts.clear()
        self.snapshots.stop()
        if stateful:
            try:
                self.snapshots.persist_now()
            except CloudError as e:
                logger.error(f"Final snapshot failed: {e}")
        self._close_server()
        self._poster.shutdown(wait=False)
        logger.info(f"Container {self.node_id} stopped")

    def kill(self) -> None:
        """Abrupt stop as if the process died: no leave, no drain, no final snapshot."""
        if self._stopped.is_set():
            return
        self._stopped.set()
        self.running = False
        if self._ttl_timer is not None:
            self._ttl_timer.cancel()
        self.directory_client.stop(leave=False)
        self.snapshots.stop()
        for host in reversed(list(self._hosts.values())):
            host.kill()
        self._hosts.clear()
        self._close_server()
        self._poster.shutdown(wait=False)
        logger.warning(f"Container {self.node_id} killed")

    def wait_stopped(self, timeout: Optional[float] = None) -> bool:
        return self._stopped.wait(timeout)

    def _expire(self) -> None:
        logger.info(f"TTL of {self.config.ttl_seconds}s reached, decommissioning")
        self.stop(drain=True)

    def _close_server(self) -> None:
        if self._server is not None:
            if self._server_thread is not None:
                self._server.shutdown()
            self._server.server_close()
            self._server = None

    # ------------------------------------------------------------------ registry

    def hosts_service(self, name: str) -> bool:
        host = self._hosts.get(name)
        return host is not None and host.registration.state == ServiceState.STARTED

    def service(self, name: str) -> Service:
        host = self._hosts.get(name)
        if host is None:
            raise NotInstalled(f"service {name!r} is not installed")
        return host.service

    def registrations(self) -> List[ServiceRegistration]:
        return [h.registration for h in self._hosts.values()]

    def info(self) -> ContainerInfo:
        return ContainerInfo(
            node_id=self.node_id,
            endpoint=self.endpoint,
            services=self.registrations(),
            static_profile=self.static_profile,
            catalogue_node_id=self.directory_client.catalogue_node or "",
            registered=self.directory_client.registered,
        )

    def advertised_services(self) -> List[str]:
        return [name for name, h in self._hosts.items() if h.registration.state == ServiceState.STARTED and h.accepting]

    def advertised_attributes(self) -> Dict[str, int]:
        attributes: Dict[str, int] = {"incarnation": self.incarnation}
        for name in self.advertised_services():
            attributes.update(self._hosts[name].service.advertise())
        return attributes

    def install_service(self, name: str, options: Optional[Dict[str, Any]] = None) -> ServiceRegistration:
        with self._admin_lock:
            if name in self._hosts:
                raise AlreadyInstalled(f"service {name!r} is already installed")
            service = self.catalog.get(name)(self, options or {})
            host = ServiceHost(service, self)
            host.start()
            self._hosts[name] = host
        logger.info(f"Installed service {name}")
        self.directory_client.beat_now()
        return host.registration

    def uninstall_service(self, name: str) -> None:
        with self._admin_lock:
            host = self._hosts.get(name)
            if host is None:
                raise NotInstalled(f"service {name!r} is not installed")
            host.drain(self.config.drain_window_s)
            host.stop()
            del self._hosts[name]
        logger.info(f"Uninstalled service {name}")
        self.directory_client.beat_now()

    # ------------------------------------------------------------------ peers

    def learn_peer(self, node_id: str, endpoint: str) -> None:
        with self._peers_lock:
            self._peers[node_id] = endpoint

    def learn_peers(self, peers: Dict[str, str]) -> None:
        with self._peers_lock:
            self._peers.update(peers)

    def peer_endpoint(self, node_id: str) -> str:
        with self._peers_lock:
            endpoint = self._peers.get(node_id)
        if endpoint is None:
            raise UnknownNode(f"no route to node {node_id}")
        return endpoint

    def locate(self, service: str) -> str:
        """Node id of a live node hosting ``service``, preferring this one."""
        if self.hosts_service(service):
            return self.node_id
        records = self.directory_client.query(service)
        if not records:
            raise UnknownService(f"no live node hosts {service!r}")
        self.learn_peer(records[0].node_id, records[0].endpoint)
        return records[0].node_id

    # ------------------------------------------------------------------ messaging

    def dispatch(self, envelope: ServiceEnvelope, timeout: Optional[float] = None) -> ServiceEnvelope:
        """
        Route an envelope and return its reply. Remote-side failures come back
        as error replies; transport failures raise.
        """
        timeout = timeout or self.config.dispatch_timeout_s
        if envelope.target_node in (self.node_id, ANY_NODE):
            return self.deliver(envelope, timeout)
        endpoint = self.peer_endpoint(envelope.target_node)
        return self.request_endpoint(endpoint, envelope, timeout)

    def request_endpoint(self, endpoint: str, envelope: ServiceEnvelope, timeout: float) -> ServiceEnvelope:
        return transport.request(endpoint, envelope, timeout, self.config.max_message_bytes)

    def deliver(self, envelope: ServiceEnvelope, timeout: Optional[float] = None) -> ServiceEnvelope:
        """Hand an envelope to a local service; always returns a reply."""
        timeout = timeout or self.config.dispatch_timeout_s
        try:
            if envelope.target_service == CONTAINER_SERVICE:
                return envelope.reply(encode_body(self._builtin(envelope)), source_node=self.node_id)
            host = self._hosts.get(envelope.target_service)
            if host is None or not host.accepting:
                raise UnknownService(f"no service {envelope.target_service!r} on {self.node_id}")
            try:
                return host.submit(envelope).result(timeout)
            except FutureTimeout:
                raise DispatchTimeout(f"{envelope.target_service}/{envelope.kind} did not reply within {timeout}s")
        except NotInstalled:
            return envelope.error_reply(UnknownService(f"service {envelope.target_service!r} is draining"), self.node_id)
        except CloudError as e:
            return envelope.error_reply(e, self.node_id)

    def call(
        self,
        node_id: str,
        service: str,
        kind: str,
        body: Any = None,
        timeout: Optional[float] = None,
    ) -> bytes:
        """Request/reply helper: raises the remote error, returns the reply payload."""
        envelope = ServiceEnvelope(
            source_node=self.node_id,
            target_node=node_id,
            target_service=service,
            kind=kind,
            payload=encode_body(body),
        )
        reply = self.dispatch(envelope, timeout)
        reply.raise_for_error()
        return reply.payload

    def post(self, node_id: str, service: str, kind: str, body: Any = None) -> None:
        """Fire-and-forget. Local posts keep arrival order."""
        envelope = ServiceEnvelope(
            source_node=self.node_id,
            target_node=node_id,
            target_service=service,
            kind=kind,
            payload=encode_body(body),
        )
        if node_id == self.node_id:
            host = self._hosts.get(service)
            if host is not None:
                try:
                    host.submit(envelope)
                except NotInstalled:
                    logger.debug(f"Dropped post {kind} to draining {service}")
            return
        try:
            self._poster.submit(self._post_remote, envelope)
        except RuntimeError:
            pass  # shutting down

    def _post_remote(self, envelope: ServiceEnvelope) -> None:
        try:
            reply = self.dispatch(envelope)
            reply.raise_for_error()
        except CloudError as e:
            logger.info(f"Post {envelope.kind} to {envelope.target_node} failed: {e.code}")

    # ------------------------------------------------------------------ built-in verbs

    def _builtin(self, envelope: ServiceEnvelope) -> Any:
        if envelope.kind == "sys.discover":
            catalogue = self.directory_client.catalogue_node
            if catalogue is None or self.directory_client.catalogue_endpoint is None:
                raise NoCatalogue(f"{self.node_id} has not joined a catalogue")
            return DiscoverReply(
                catalogue_node_id=catalogue,
                catalogue_endpoint=self.directory_client.catalogue_endpoint,
            )
        if envelope.kind == "sys.info":
            return self.info()
        if envelope.kind == "sys.install":
            request = parse_body(envelope.payload, InstallRequest)
            self.security.require(request.credentials, Action.ADMIN, f"node:{self.node_id}", refusal=Unauthorized)
            return self.install_service(request.name, request.options)
        if envelope.kind == "sys.uninstall":
            request = parse_body(envelope.payload, UninstallRequest)
            self.security.require(request.credentials, Action.ADMIN, f"node:{self.node_id}", refusal=Unauthorized)
            self.uninstall_service(request.name)
            return None
        if envelope.kind == "sys.stop":
            request = parse_body(envelope.payload, StopRequest)
            self.security.require(request.credentials, Action.ADMIN, f"node:{self.node_id}", refusal=Unauthorized)
            threading.Thread(target=self.stop, kwargs={"drain": request.drain}, daemon=True).start()
            return None
        raise InvalidRequest(f"unknown container verb {envelope.kind!r}")

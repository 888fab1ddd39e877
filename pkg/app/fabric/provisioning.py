"""
Dynamic provisioning of new nodes.

A provider turns a ProvisionRequest into running containers that join the
cloud through the given seed peers. The desk-scale provider is
LocalSpawnProvider: it renders a container configuration from the
``container.yaml.j2`` template and either launches the container binary as a
child process or starts the container inside the current process (tests).
"""
import logging
import os
import socket
import subprocess
import sys
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Literal, Optional
from uuid import uuid4

from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel, Field

from app.clock import now_ms
from app.config import settings
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.directory.schemas import NodeState
from app.errors import CapacityExceeded, CloudError, ProviderUnavailable, Unauthorized, UnknownNode
from app.fabric.schemas import (
    ProvisionedNode,
    ProvisionedReply,
    ProvisionRequest,
    ProvisionResult,
    ReleaseRequest,
)
from app.transversal.identity import Action

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
PROJECT_ROOT = Path(__file__).resolve().parents[2]

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)


def render_container_config(
    node_id: str,
    listen_endpoint: str,
    services: List[Dict],
    seed_peers: List[str],
    security_provider: str = "anonymous",
    credential_file: Optional[str] = None,
    persistence_provider: str = "volatile",
    persistence_path: Optional[str] = None,
    heartbeat_interval_ms: int = 1000,
    license_max_nodes: int = 0,
    ttl_seconds: int = 0,
    generator: str = "deskcloud",
) -> str:
    """Container YAML for one node; ``services`` are ``{name, options}`` dicts."""
    return _env.get_template("container.yaml.j2").render(
        node_id=node_id,
        listen_endpoint=listen_endpoint,
        services=services,
        seed_peers=seed_peers,
        security_provider=security_provider,
        credential_file=credential_file,
        persistence_provider=persistence_provider,
        persistence_path=persistence_path,
        heartbeat_interval_ms=heartbeat_interval_ms,
        license_max_nodes=license_max_nodes,
        ttl_seconds=ttl_seconds,
        generator=generator,
    )


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def container_command(config_path: Path) -> List[str]:
    return [sys.executable, "-m", "app.container.cli", "--config", str(config_path)]


class Provider(ABC):
    """Acquires and releases nodes; one provider is active per container."""

    max_nodes: int = 0

    @abstractmethod
    def provision(self, request: ProvisionRequest) -> List[ProvisionedNode]:
        ...

    @abstractmethod
    def release(self, node_id: str) -> None:
        ...

    @abstractmethod
    def nodes(self) -> List[ProvisionedNode]:
        ...

    def release_all(self) -> None:
        for node in self.nodes():
            if node.alive:
                self.release(node.node_id)


@dataclass
class _Spawned:
    record: ProvisionedNode
    config_path: Path
    process: Optional[subprocess.Popen] = None
    container: Optional[object] = None

    @property
    def alive(self) -> bool:
        if self.process is not None:
            return self.process.poll() is None
        return bool(self.container is not None and self.container.running)


class LocalSpawnProvider(Provider):
    def __init__(
        self,
        seed_peers: List[str],
        mode: Literal["process", "inprocess"] = "process",
        max_nodes: int = 4,
        provision_timeout_s: float = 10.0,
        config_dir: Optional[str] = None,
        host: str = "127.0.0.1",
        heartbeat_interval_ms: int = 1000,
        security_provider: str = "anonymous",
        credential_file: Optional[str] = None,
        alive_members: Optional[Callable[[], Iterable[str]]] = None,
    ):
        if not seed_peers:
            raise ProviderUnavailable("a provider needs at least one seed peer")
        self.seed_peers = list(seed_peers)
        self.mode = mode
        self.max_nodes = max_nodes
        self.provision_timeout_s = provision_timeout_s
        self.config_dir = Path(config_dir or os.path.join(settings.STATE_DIR, "provisioned"))
        self.host = host
        self.heartbeat_interval_ms = heartbeat_interval_ms
        self.security_provider = security_provider
        self.credential_file = credential_file
        self.alive_members = alive_members
        self._spawned: Dict[str, _Spawned] = {}
        self._lock = threading.Lock()

    def active(self) -> int:
        return sum(1 for s in self._spawned.values() if s.alive)

    def nodes(self) -> List[ProvisionedNode]:
        return [s.record.model_copy(update={"alive": s.alive}) for s in self._spawned.values()]

    def provision(self, request: ProvisionRequest) -> List[ProvisionedNode]:
        # One in-flight request per provider.
        with self._lock:
            if self.active() + request.count > self.max_nodes:
                raise CapacityExceeded(
                    f"{request.count} more nodes would exceed the provider maximum of {self.max_nodes}"
                )
            self.config_dir.mkdir(parents=True, exist_ok=True)
            started: List[_Spawned] = []
            try:
                for _ in range(request.count):
                    spawned = self._spawn(request)
                    started.append(spawned)
                    self._spawned[spawned.record.node_id] = spawned
                for spawned in started:
                    self._await_ready(spawned)
            except Exception:
                for spawned in started:
                    self._terminate(spawned)
                raise
            logger.info(
                f"Provisioned {request.count} node(s) with {request.required_services}",
                extra={"node_ids": [s.record.node_id for s in started]},
            )
            return [s.record for s in started]

    def _spawn(self, request: ProvisionRequest) -> _Spawned:
        node_id = str(uuid4())
        endpoint = f"{self.host}:{free_port(self.host)}"
        config_path = self.config_dir / f"{node_id}.yaml"
        config_path.write_text(
            render_container_config(
                node_id=node_id,
                listen_endpoint=endpoint,
                services=[{"name": s, "options": {}} for s in request.required_services],
                seed_peers=self.seed_peers,
                security_provider=self.security_provider,
                credential_file=self.credential_file,
                heartbeat_interval_ms=self.heartbeat_interval_ms,
                ttl_seconds=request.ttl_seconds,
                generator="fabric provider",
            ),
            encoding="utf-8",
        )
        record = ProvisionedNode(
            node_id=node_id,
            endpoint=endpoint,
            mode=self.mode,
            services=list(request.required_services),
            ttl_seconds=request.ttl_seconds,
            started_at=now_ms(),
        )
        spawned = _Spawned(record=record, config_path=config_path)
        if self.mode == "process":
            env = dict(os.environ)
            env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(PROJECT_ROOT), env.get("PYTHONPATH")]))
            try:
                spawned.process = subprocess.Popen(
                    container_command(config_path),
                    env=env,
                    stdout=subprocess.DEVNULL,
                    stderr=subprocess.DEVNULL,
                    start_new_session=True,
                )
            except OSError as e:
                raise ProviderUnavailable(f"cannot launch the container binary: {e}")
            spawned.record = record.model_copy(update={"pid": spawned.process.pid})
        else:
            from app.container.config import load_config
            from app.container.container import Container

            try:
                spawned.container = Container(load_config(config_path)).start()
            except CloudError as e:
                raise ProviderUnavailable(f"in-process container failed to start: {e.message}", cause=e.code)
        return spawned

    def _await_ready(self, spawned: _Spawned) -> None:
        """
        The node is ready once its listener accepts connections and, when the
        provider can see the catalogue, once it is listed there as alive.
        """
        node_id = spawned.record.node_id
        deadline = time.monotonic() + self.provision_timeout_s
        self._await_listener(spawned, deadline)
        if self.alive_members is None:
            return
        while time.monotonic() < deadline:
            if not spawned.alive:
                raise ProviderUnavailable(f"node {node_id} exited before joining the cloud")
            try:
                if node_id in set(self.alive_members()):
                    return
            except CloudError as e:
                logger.debug(f"Membership lookup failed: {e.code}")
            time.sleep(0.1)
        raise ProviderUnavailable(f"node {node_id} did not join the cloud within {self.provision_timeout_s}s")

    def _await_listener(self, spawned: _Spawned, deadline: float) -> None:
        host, _, port = spawned.record.endpoint.rpartition(":")
        while time.monotonic() < deadline:
            if not spawned.alive:
                raise ProviderUnavailable(f"node {spawned.record.node_id} exited during startup")
            try:
                with socket.create_connection((host, int(port)), timeout=0.5):
                    return
            except OSError:
                time.sleep(0.1)
        raise ProviderUnavailable(
            f"node {spawned.record.node_id} not reachable after {self.provision_timeout_s}s"
        )

    def release(self, node_id: str) -> None:
        spawned = self._spawned.get(node_id)
        if spawned is None:
            raise UnknownNode(f"node {node_id} was not provisioned here")
        self._terminate(spawned)
        logger.info(f"Released node {node_id}")

    def _terminate(self, spawned: _Spawned) -> None:
        if spawned.process is not None and spawned.process.poll() is None:
            spawned.process.terminate()
            try:
                spawned.process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                spawned.process.kill()
        elif spawned.container is not None:
            spawned.container.stop(drain=True)


class ProvisionerOptions(BaseModel):
    mode: Literal["process", "inprocess"] = "process"
    max_nodes: int = Field(4, ge=0)
    provision_timeout_s: float = Field(10.0, gt=0)
    config_dir: Optional[str] = None
    heartbeat_interval_ms: Optional[int] = Field(None, ge=100)


class ProvisionerService(Service):
    """Serves ``fab.*`` verbs over the node's provider."""

    name = "provisioner"
    Options = ProvisionerOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        config = container.config
        self.provider = LocalSpawnProvider(
            seed_peers=config.seed_peers or [container.endpoint],
            mode=self.options.mode,
            max_nodes=self.options.max_nodes,
            provision_timeout_s=self.options.provision_timeout_s,
            config_dir=self.options.config_dir,
            host=container.endpoint.rpartition(":")[0] or "127.0.0.1",
            heartbeat_interval_ms=self.options.heartbeat_interval_ms or config.heartbeat_interval_ms,
            security_provider=config.security_provider,
            credential_file=config.credential_file,
            alive_members=self._alive_members,
        )

    def _alive_members(self) -> List[str]:
        records = self.container.directory_client.query()
        return [r.node_id for r in records if r.state == NodeState.ALIVE]

    def on_stop(self) -> None:
        self.provider.release_all()

    on_kill = on_stop

    @handles("fab.provision")
    def provision(self, envelope: ServiceEnvelope) -> ProvisionResult:
        request = parse_body(envelope.payload, ProvisionRequest)
        self.container.security.require(request.credentials, Action.ADMIN, "fabric", refusal=Unauthorized)
        nodes = self.provider.provision(request)
        for node in nodes:
            self.container.learn_peer(node.node_id, node.endpoint)
        return ProvisionResult(endpoints=[n.endpoint for n in nodes], node_ids=[n.node_id for n in nodes])

    @handles("fab.release")
    def release(self, envelope: ServiceEnvelope) -> None:
        request = parse_body(envelope.payload, ReleaseRequest)
        self.container.security.require(request.credentials, Action.ADMIN, "fabric", refusal=Unauthorized)
        self.provider.release(request.node_id)

    @handles("fab.nodes")
    def list_nodes(self, envelope: ServiceEnvelope) -> ProvisionedReply:
        return ProvisionedReply(nodes=self.provider.nodes(), max_nodes=self.provider.max_nodes)

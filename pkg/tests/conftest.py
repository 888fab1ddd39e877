"""
Shared pytest fixtures for deskcloud tests.

Cloud tests run real containers inside the test process: every container
binds an ephemeral port on 127.0.0.1 and heartbeats every 200 ms, so a
master and a couple of workers come up in well under a second. State
(workspaces, storage roots, snapshots) goes to a per-test tmp directory.
SQL snapshot tests use an in-memory SQLite engine, no database server needed.
"""
import time
from typing import Callable, Dict, List, Optional

import pytest

from app.config import settings
from app.container.config import ContainerConfig, ServiceSpec
from app.container.container import Container
from app.container.registry import ServiceCatalog
from app.container.wire import parse_body
from app.database.base import init_db, make_engine
from app.directory.schemas import NodeState, QueryReply, QueryRequest

HEARTBEAT_MS = 200
MASTER_SERVICES = ["directory", "scheduler", "reservation", "storage"]


def wait_until(predicate: Callable[[], bool], timeout: float = 10.0, interval: float = 0.05) -> bool:
    """Poll ``predicate`` until it holds or ``timeout`` elapses."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


def alive_nodes(master: Container) -> List[str]:
    reply = parse_body(master.call(master.node_id, "directory", "dir.query", QueryRequest()), QueryReply)
    return [r.node_id for r in reply.records if r.state == NodeState.ALIVE]


@pytest.fixture(autouse=True)
def state_dir(tmp_path, monkeypatch):
    """Every test gets its own STATE_DIR."""
    root = tmp_path / "state"
    root.mkdir()
    monkeypatch.setattr(settings, "STATE_DIR", str(root))
    return root


@pytest.fixture
def test_engine():
    """Function-scoped in-memory SQLite engine with the snapshot table created."""
    engine = make_engine("sqlite:///:memory:")
    init_db(engine)
    yield engine
    engine.dispose()


class LocalCloud:
    """A master plus workers running in this process."""

    def __init__(self, root):
        self.root = root
        self.containers: List[Container] = []
        self.master: Optional[Container] = None

    def _config(self, name: str, services: List[ServiceSpec], seeds: List[str], **overrides) -> ContainerConfig:
        fields = dict(
            listen_endpoint="127.0.0.1:0",
            service_manifest=services,
            seed_peers=seeds,
            heartbeat_interval_ms=HEARTBEAT_MS,
            dispatch_timeout_s=5.0,
            drain_window_s=1.0,
        )
        fields.update(overrides)
        return ContainerConfig(**fields)

    def executor(self, name: str, slots: int = 2, **options) -> ServiceSpec:
        return ServiceSpec(
            name="executor",
            options={"slots": slots, "workspace_root": str(self.root / name / "workspaces"), **options},
        )

    def start_master(
        self,
        services: Optional[List[str]] = None,
        slots: int = 2,
        with_executor: bool = True,
        options: Optional[Dict[str, Dict]] = None,
        **overrides,
    ) -> Container:
        options = options or {}
        specs = []
        for name in services or MASTER_SERVICES:
            opts = dict(options.get(name, {}))
            if name == "storage":
                opts.setdefault("root", str(self.root / "master" / "storage"))
            specs.append(ServiceSpec(name=name, options=opts))
        if with_executor:
            specs.append(self.executor("master", slots, **options.get("executor", {})))
        self.master = Container(self._config("master", specs, [], **overrides)).start()
        self.containers.append(self.master)
        return self.master

    def start_worker(
        self,
        name: str,
        slots: int = 2,
        services: Optional[List[ServiceSpec]] = None,
        catalog: Optional[ServiceCatalog] = None,
        **overrides,
    ) -> Container:
        assert self.master is not None, "start the master first"
        specs = services if services is not None else [self.executor(name, slots)]
        worker = Container(self._config(name, specs, [self.master.endpoint], **overrides), catalog=catalog).start()
        self.containers.append(worker)
        return worker

    def wait_members(self, count: int, timeout: float = 10.0) -> None:
        assert wait_until(lambda: len(alive_nodes(self.master)) >= count, timeout), (
            f"catalogue never reached {count} alive nodes"
        )

    def shutdown(self) -> None:
        for container in reversed(self.containers):
            if container.running:
                container.kill()


@pytest.fixture
def local_cloud(tmp_path):
    """Factory-style harness; every container started through it is killed afterwards."""
    cloud = LocalCloud(tmp_path)
    yield cloud
    cloud.shutdown()


@pytest.fixture
def running_cloud(local_cloud):
    """Master (directory, scheduler, reservation, storage, executor) plus two workers, all alive."""
    local_cloud.start_master()
    local_cloud.start_worker("worker-1")
    local_cloud.start_worker("worker-2")
    local_cloud.wait_members(3)
    return local_cloud


@pytest.fixture
def cloud_client(running_cloud):
    from app.appmodel.client import CloudClient

    client = CloudClient.connect(running_cloud.master.endpoint, timeout_s=5.0)
    yield client
    client.close()

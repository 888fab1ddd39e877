"""
Data channel contract, the channel registry and the reference ``local``
channel.

A channel has a server component owning a file space and a client component
reaching it remotely. Schemes map to factories in a ChannelRegistry; the
process-wide registry knows ``local`` and ``aftp``.
"""
import hashlib
import logging
import os
import tempfile
import threading
from abc import ABC, abstractmethod
from pathlib import Path, PurePosixPath
from typing import Callable, Dict, List, Optional, Tuple

from app.errors import ChannelUnreachable, DuplicateScheme, FileMissing, PathRejected
from app.storage.schemas import DataChannelSpec, Direction, FileDescriptor

logger = logging.getLogger(__name__)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def confine(root: Path, name: str) -> Path:
    """Resolve ``name`` under ``root``; reject anything that would escape it."""
    if not name or "\\" in name or "\x00" in name:
        raise PathRejected(f"invalid name {name!r}")
    pure = PurePosixPath(name)
    if pure.is_absolute() or any(part in ("..", "") for part in pure.parts):
        raise PathRejected(f"name {name!r} escapes the channel root")
    root = root.resolve()
    target = (root / pure).resolve()
    if target != root and root not in target.parents:
        raise PathRejected(f"name {name!r} escapes the channel root")
    return target


def atomic_write(target: Path, data: bytes) -> None:
    """Write-new then rename, so readers never see a partial file."""
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".partial-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def list_names(root: Path, prefix: str = "") -> List[str]:
    if not root.exists():
        return []
    names = []
    for path in root.rglob("*"):
        if path.is_file() and not path.name.startswith(".partial-"):
            name = path.relative_to(root).as_posix()
            if name.startswith(prefix):
                names.append(name)
    return sorted(names)


class ChannelClient(ABC):
    def __init__(self, spec: DataChannelSpec):
        self.spec = spec

    @abstractmethod
    def put(self, logical_name: str, content: bytes) -> FileDescriptor:
        ...

    @abstractmethod
    def get(self, logical_name: str) -> bytes:
        ...

    @abstractmethod
    def list(self, prefix: str = "") -> List[str]:
        ...

    @abstractmethod
    def delete(self, logical_name: str) -> None:
        """Idempotent."""

    def describe(self, logical_name: str, content: bytes, direction: Direction = Direction.INPUT) -> FileDescriptor:
        return FileDescriptor(
            logical_name=logical_name,
            size_bytes=len(content),
            digest=sha256_hex(content),
            channel=self.spec,
            direction=direction,
        )

    def put_file(self, logical_name: str, path: Path) -> FileDescriptor:
        return self.put(logical_name, Path(path).read_bytes())

    def get_file(self, logical_name: str, path: Path) -> None:
        atomic_write(Path(path), self.get(logical_name))


class ChannelServer(ABC):
    def __init__(self, spec: DataChannelSpec, **options):
        self.spec = spec
        self.options = options

    @abstractmethod
    def start(self) -> DataChannelSpec:
        """Begin serving; returns the spec clients should use."""

    def stop(self) -> None:
        pass


class LocalChannelClient(ChannelClient):
    """Reads and writes a directory on this machine."""

    def __init__(self, spec: DataChannelSpec):
        super().__init__(spec)
        self.root = Path(spec.root or ".")

    def put(self, logical_name: str, content: bytes) -> FileDescriptor:
        atomic_write(confine(self.root, logical_name), content)
        return self.describe(logical_name, content)

    def get(self, logical_name: str) -> bytes:
        path = confine(self.root, logical_name)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise FileMissing(f"{logical_name} not found")
        except OSError as e:
            raise ChannelUnreachable(f"cannot read {logical_name}", cause=str(e))

    def list(self, prefix: str = "") -> List[str]:
        return list_names(self.root.resolve(), prefix)

    def delete(self, logical_name: str) -> None:
        try:
            confine(self.root, logical_name).unlink()
        except FileNotFoundError:
            pass


class LocalChannelServer(ChannelServer):
    def start(self) -> DataChannelSpec:
        Path(self.spec.root or ".").mkdir(parents=True, exist_ok=True)
        return self.spec


ClientFactory = Callable[[DataChannelSpec], ChannelClient]
ServerFactory = Callable[..., ChannelServer]


class ChannelRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._factories: Dict[str, Tuple[ClientFactory, ServerFactory]] = {}

    def register_channel(self, scheme: str, client_factory: ClientFactory, server_factory: ServerFactory) -> None:
        with self._lock:
            if scheme in self._factories:
                raise DuplicateScheme(f"scheme {scheme!r} is already registered")
            self._factories[scheme] = (client_factory, server_factory)

    def schemes(self) -> List[str]:
        return sorted(self._factories)

    def _lookup(self, scheme: str) -> Tuple[ClientFactory, ServerFactory]:
        try:
            return self._factories[scheme]
        except KeyError:
            raise ChannelUnreachable(f"no channel registered for scheme {scheme!r}", cause="UnknownScheme")

    def client(self, spec: DataChannelSpec) -> ChannelClient:
        return self._lookup(spec.scheme)[0](spec)

    def server(self, spec: DataChannelSpec, **options) -> ChannelServer:
        return self._lookup(spec.scheme)[1](spec, **options)


_registry: Optional[ChannelRegistry] = None


def get_channel_registry() -> ChannelRegistry:
    """Process-wide registry with the built-in schemes (singleton pattern)."""
    global _registry
    if _registry is None:
        from app.storage.aftp import AftpClient, AftpServer

        registry = ChannelRegistry()
        registry.register_channel("local", LocalChannelClient, LocalChannelServer)
        registry.register_channel("aftp", AftpClient, AftpServer)
        _registry = registry
    return _registry

"""
``aftp``: the built-in framed file transfer channel.

Uses the container framing (4-byte big-endian length + body) over TCP, one
request per connection.

Request header frame, JSON::

    {"verb": "PUT"|"GET"|"LIST"|"DEL", "name": str, "prefix": str,
     "token": str, "size": int}

PUT:  header, then data frames of at most 64 KiB carrying exactly ``size``
      bytes, then a trailer frame {"sha256": hex}. The server verifies the
      digest, renames into place and answers {"ok": true, "size", "sha256"}.
GET:  header; the server answers {"ok": true, "size"}, the data frames and the
      trailer. The client verifies the digest.
LIST: answer {"ok": true, "names": [...]}.
DEL:  answer {"ok": true}; deleting a missing name succeeds.

Failures answer {"ok": false, "code", "message"} with an error code such as
AuthFailed, NotFound, PathRejected or DigestMismatch.
"""
import hashlib
import hmac
import json
import logging
import socket
import socketserver
import threading
from pathlib import Path
from typing import Callable, List, Optional

from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_fixed

from app.container.config import split_endpoint
from app.container.wire import read_frame, write_frame
from app.errors import AuthFailed, ChannelUnreachable, CloudError, DigestMismatch, FileMissing
from app.storage.channels import ChannelClient, ChannelServer, atomic_write, confine, list_names
from app.storage.schemas import DataChannelSpec, FileDescriptor

logger = logging.getLogger(__name__)

CHUNK = 64 * 1024
CONTROL_FRAME_MAX = 1024 * 1024
IO_TIMEOUT_S = 30.0

# Optional fault injection: (frame_index, data) -> data. Tests flip bits here.
FrameHook = Callable[[int, bytes], bytes]


def _send_json(sock: socket.socket, obj: dict) -> None:
    write_frame(sock, json.dumps(obj).encode("utf-8"))


def _recv_json(sock: socket.socket) -> dict:
    body = read_frame(sock, CONTROL_FRAME_MAX)
    if body is None:
        raise ConnectionError("peer closed the connection")
    return json.loads(body.decode("utf-8"))


def _send_content(sock: socket.socket, content: bytes, hook: Optional[FrameHook]) -> None:
    for index, offset in enumerate(range(0, len(content), CHUNK)):
        chunk = content[offset:offset + CHUNK]
        if hook is not None:
            chunk = hook(index, chunk)
        write_frame(sock, chunk)
    _send_json(sock, {"sha256": hashlib.sha256(content).hexdigest()})


def _recv_content(sock: socket.socket, size: int) -> bytes:
    """Read data frames totalling ``size`` bytes, then check the trailer digest."""
    buf = bytearray()
    digest = hashlib.sha256()
    while len(buf) < size:
        chunk = read_frame(sock, CHUNK)
        if chunk is None:
            raise ConnectionError("transfer cut short")
        buf.extend(chunk)
        digest.update(chunk)
    if len(buf) != size:
        raise DigestMismatch(f"received {len(buf)} bytes, expected {size}")
    trailer = _recv_json(sock)
    if trailer.get("sha256") != digest.hexdigest():
        raise DigestMismatch("content does not match its SHA-256 trailer")
    return bytes(buf)


def _discard_content(sock: socket.socket, header: dict) -> None:
    """Consume a refused upload so the sender can read the refusal."""
    try:
        _recv_content(sock, int(header.get("size", 0)))
    except CloudError:
        pass


def _error(e: CloudError) -> dict:
    return {"ok": False, "code": e.code, "message": e.message}


class _AftpHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: "_AftpTcpServer" = self.server
        sock: socket.socket = self.request
        sock.settimeout(IO_TIMEOUT_S)
        try:
            header = _recv_json(sock)
            verb = header.get("verb")
            if not hmac.compare_digest(str(header.get("token", "")), server.owner.token):
                if verb == "PUT":
                    _discard_content(sock, header)
                _send_json(sock, _error(AuthFailed()))
                return
            if verb == "PUT":
                self._put(sock, header)
            elif verb == "GET":
                self._get(sock, header)
            elif verb == "LIST":
                _send_json(sock, {"ok": True, "names": list_names(server.owner.root.resolve(), header.get("prefix", ""))})
            elif verb == "DEL":
                path = confine(server.owner.root, header.get("name", ""))
                try:
                    path.unlink()
                    server.owner.notify("deleted", header["name"], None)
                except FileNotFoundError:
                    pass
                _send_json(sock, {"ok": True})
            else:
                _send_json(sock, {"ok": False, "code": "InvalidRequest", "message": f"unknown verb {verb!r}"})
        except CloudError as e:
            try:
                _send_json(sock, _error(e))
            except OSError:
                pass
        except (ConnectionError, OSError, ValueError) as e:
            logger.info(f"aftp connection from {self.client_address} ended: {e}")

    def _put(self, sock: socket.socket, header: dict) -> None:
        owner: AftpServer = self.server.owner
        content = _recv_content(sock, int(header.get("size", 0)))
        path = confine(owner.root, header.get("name", ""))
        atomic_write(path, content)
        descriptor = FileDescriptor(
            logical_name=header["name"],
            size_bytes=len(content),
            digest=hashlib.sha256(content).hexdigest(),
            channel=owner.public_spec,
        )
        owner.notify("stored", header["name"], descriptor)
        _send_json(sock, {"ok": True, "size": descriptor.size_bytes, "sha256": descriptor.digest})

    def _get(self, sock: socket.socket, header: dict) -> None:
        owner: AftpServer = self.server.owner
        path = confine(owner.root, header.get("name", ""))
        try:
            content = path.read_bytes()
        except FileNotFoundError:
            raise FileMissing(f"{header.get('name')} not found")
        _send_json(sock, {"ok": True, "size": len(content)})
        _send_content(sock, content, owner.corrupt_frame)


class _AftpTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class AftpServer(ChannelServer):
    """
    Serves ``root`` over aftp. ``on_change(event, name, descriptor)`` is called
    after every stored or deleted file.
    """

    def __init__(
        self,
        spec: DataChannelSpec,
        root: Optional[str] = None,
        token: Optional[str] = None,
        on_change: Optional[Callable[[str, str, Optional[FileDescriptor]], None]] = None,
        **options,
    ):
        super().__init__(spec, **options)
        self.root = Path(root or spec.root or ".")
        self.token = spec.credentials if token is None else token
        self.on_change = on_change
        self.corrupt_frame: Optional[FrameHook] = None
        self.public_spec = spec
        self._tcp: Optional[_AftpTcpServer] = None

    def start(self) -> DataChannelSpec:
        self.root.mkdir(parents=True, exist_ok=True)
        host, port = split_endpoint(self.spec.endpoint or "127.0.0.1:0")
        try:
            self._tcp = _AftpTcpServer((host, port), _AftpHandler)
        except OSError as e:
            raise ChannelUnreachable(f"cannot bind aftp server on {host}:{port}", cause=str(e))
        self._tcp.owner = self
        advertised = "127.0.0.1" if host in ("0.0.0.0", "") else host
        self.public_spec = DataChannelSpec(
            scheme="aftp",
            endpoint=f"{advertised}:{self._tcp.server_address[1]}",
            credentials=self.token,
            root="",
        )
        threading.Thread(target=self._tcp.serve_forever, name="aftp-server", daemon=True).start()
        logger.info(f"aftp serving {self.root} at {self.public_spec.endpoint}")
        return self.public_spec

    def notify(self, event: str, name: str, descriptor: Optional[FileDescriptor]) -> None:
        if self.on_change is not None:
            try:
                self.on_change(event, name, descriptor)
            except Exception as e:
                logger.warning(f"aftp change callback failed for {name}: {e}")

    def stop(self) -> None:
        if self._tcp is not None:
            self._tcp.shutdown()
            self._tcp.server_close()
            self._tcp = None


class AftpClient(ChannelClient):
    def __init__(self, spec: DataChannelSpec, timeout_s: float = IO_TIMEOUT_S):
        super().__init__(spec)
        self.timeout_s = timeout_s
        self.corrupt_frame: Optional[FrameHook] = None

    def _name(self, logical_name: str) -> str:
        """Channel root prefix joined with the logical name."""
        if not self.spec.root:
            return logical_name
        return f"{self.spec.root.strip('/')}/{logical_name}"

    def _connect(self) -> socket.socket:
        host, port = split_endpoint(self.spec.endpoint)
        try:
            for attempt in Retrying(
                stop=stop_after_attempt(3),
                wait=wait_fixed(0.1),
                retry=retry_if_exception_type(OSError),
                reraise=True,
            ):
                with attempt:
                    sock = socket.create_connection((host, port), timeout=self.timeout_s)
        except OSError as e:
            raise ChannelUnreachable(f"cannot reach aftp server {self.spec.endpoint}", cause=str(e))
        sock.settimeout(self.timeout_s)
        return sock

    def _check(self, answer: dict) -> dict:
        if not answer.get("ok"):
            code = answer.get("code", "ChannelUnreachable")
            raise CloudError.from_payload({"code": code, "message": answer.get("message", code)})
        return answer

    def _exchange(self, header: dict, body: Optional[bytes] = None) -> dict:
        sock = self._connect()
        try:
            _send_json(sock, {**header, "token": self.spec.credentials})
            if body is not None:
                _send_content(sock, body, self.corrupt_frame)
            return self._check(_recv_json(sock))
        except (ConnectionError, OSError, ValueError) as e:
            raise ChannelUnreachable(f"aftp {header.get('verb')} failed", cause=str(e))
        finally:
            sock.close()

    def put(self, logical_name: str, content: bytes) -> FileDescriptor:
        answer = self._exchange({"verb": "PUT", "name": self._name(logical_name), "size": len(content)}, content)
        descriptor = self.describe(logical_name, content)
        if answer.get("sha256") != descriptor.digest:
            raise DigestMismatch(f"server stored {logical_name} with a different digest")
        return descriptor

    def get(self, logical_name: str) -> bytes:
        sock = self._connect()
        try:
            _send_json(sock, {"verb": "GET", "name": self._name(logical_name), "token": self.spec.credentials})
            answer = self._check(_recv_json(sock))
            return _recv_content(sock, int(answer["size"]))
        except (ConnectionError, OSError, ValueError) as e:
            raise ChannelUnreachable(f"aftp GET {logical_name} failed", cause=str(e))
        finally:
            sock.close()

    def list(self, prefix: str = "") -> List[str]:
        answer = self._exchange({"verb": "LIST", "prefix": self._name(prefix)})
        names = answer.get("names", [])
        if self.spec.root:
            root = self.spec.root.strip("/") + "/"
            names = [n[len(root):] for n in names if n.startswith(root)]
        return names

    def delete(self, logical_name: str) -> None:
        self._exchange({"verb": "DEL", "name": self._name(logical_name)})

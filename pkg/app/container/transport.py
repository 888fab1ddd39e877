"""
TCP transport for envelopes: a threading listener and a one-shot request client.

Each request opens a connection, writes one envelope frame and reads one reply
frame. Connection refusals are retried until the request deadline so a peer
that is still binding is not reported dead.
"""
import logging
import socket
import socketserver
import time
from typing import TYPE_CHECKING

from tenacity import Retrying, retry_if_exception_type, stop_after_delay, wait_fixed

from app.container.config import split_endpoint
from app.container.wire import (
    ServiceEnvelope,
    decode_envelope,
    encode_envelope,
    max_frame_for,
    read_frame,
    write_frame,
)
from app.errors import CloudError, DispatchTimeout, FrameTooLarge, PeerUnreachable

if TYPE_CHECKING:
    from app.container.container import Container

logger = logging.getLogger(__name__)

CONNECT_RETRY_WAIT_S = 0.05


class EnvelopeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, container: "Container"):
        self.container = container
        super().__init__(address, EnvelopeHandler)


class EnvelopeHandler(socketserver.BaseRequestHandler):
    """Serves envelope frames on one connection until the peer closes it."""

    def handle(self) -> None:
        container = self.server.container
        max_frame = max_frame_for(container.config.max_message_bytes)
        sock: socket.socket = self.request
        while True:
            try:
                body = read_frame(sock, max_frame)
            except FrameTooLarge as e:
                logger.warning(f"Dropping connection from {self.client_address}: {e}")
                return
            except (ConnectionError, OSError):
                return
            if body is None:
                return
            try:
                envelope = decode_envelope(body)
            except CloudError as e:
                logger.warning(f"Undecodable envelope from {self.client_address}: {e}")
                return
            reply = container.deliver(envelope)
            try:
                write_frame(sock, encode_envelope(reply, container.config.max_message_bytes))
            except FrameTooLarge as e:
                write_frame(sock, encode_envelope(envelope.error_reply(e, container.node_id), container.config.max_message_bytes))
            except OSError:
                return


def _connect(host: str, port: int, deadline: float) -> socket.socket:
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise PeerUnreachable(f"no time left to reach {host}:{port}")
    try:
        for attempt in Retrying(
            stop=stop_after_delay(remaining),
            wait=wait_fixed(CONNECT_RETRY_WAIT_S),
            retry=retry_if_exception_type(OSError),
            reraise=True,
        ):
            with attempt:
                return socket.create_connection((host, port), timeout=max(0.01, deadline - time.monotonic()))
    except OSError as e:
        raise PeerUnreachable(f"cannot reach {host}:{port}", cause=str(e))
    raise PeerUnreachable(f"cannot reach {host}:{port}")


def request(endpoint: str, envelope: ServiceEnvelope, timeout_s: float, max_payload: int) -> ServiceEnvelope:
    """Send one envelope and wait for its reply; raises on transport failure."""
    host, port = split_endpoint(endpoint)
    deadline = time.monotonic() + timeout_s
    frame = encode_envelope(envelope, max_payload)
    sock = _connect(host, port, deadline)
    try:
        sock.settimeout(max(0.01, deadline - time.monotonic()))
        write_frame(sock, frame)
        body = read_frame(sock, max_frame_for(max_payload))
    except socket.timeout:
        raise DispatchTimeout(f"no reply from {endpoint} within {timeout_s}s")
    except (ConnectionError, OSError) as e:
        raise PeerUnreachable(f"connection to {endpoint} failed", cause=str(e))
    finally:
        sock.close()
    if body is None:
        raise PeerUnreachable(f"{endpoint} closed the connection before replying")
    return decode_envelope(body)

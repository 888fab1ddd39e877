"""
Envelope codec and length-prefixed framing.

Frame format: 4-byte big-endian length header followed by that many bytes.
Envelope frames carry a UTF-8 JSON object whose ``payload`` field is standard
base64. The framing is the contract; the JSON codec can be swapped.
"""
import base64
import json
import socket
import struct
from typing import Any, Optional
from uuid import uuid4

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator

from app.errors import CloudError, FrameTooLarge, InvalidRequest

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size

OK_KIND = "reply"
ERROR_KIND = "error"
# base64 inflates by 4/3; the rest of the envelope is small
FRAME_OVERHEAD = 64 * 1024


def max_frame_for(max_payload: int) -> int:
    return (max_payload * 4) // 3 + FRAME_OVERHEAD


class ServiceEnvelope(BaseModel):
    """The routed message unit between named services on containers."""

    model_config = ConfigDict(frozen=True)

    message_id: str = Field(default_factory=lambda: str(uuid4()))
    source_node: str
    target_node: str
    target_service: str = Field(min_length=1)
    kind: str
    payload: bytes = b""
    reply_to: Optional[str] = None

    @field_serializer("payload", when_used="json")
    def _payload_to_base64(self, payload: bytes) -> str:
        return base64.b64encode(payload).decode("ascii")

    @field_validator("payload", mode="before")
    @classmethod
    def _payload_from_base64(cls, value: Any) -> Any:
        if isinstance(value, str):
            return base64.b64decode(value.encode("ascii"), validate=True)
        return value

    def reply(self, payload: bytes = b"", kind: str = OK_KIND, source_node: Optional[str] = None) -> "ServiceEnvelope":
        return ServiceEnvelope(
            source_node=source_node or self.target_node,
            target_node=self.source_node,
            target_service=self.target_service,
            kind=kind,
            payload=payload,
            reply_to=self.message_id,
        )

    def error_reply(self, error: CloudError, source_node: Optional[str] = None) -> "ServiceEnvelope":
        body = json.dumps(error.to_payload()).encode("utf-8")
        return self.reply(body, kind=ERROR_KIND, source_node=source_node)

    @property
    def is_error(self) -> bool:
        return self.kind == ERROR_KIND

    def raise_for_error(self) -> None:
        if self.is_error:
            try:
                payload = json.loads(self.payload.decode("utf-8"))
            except ValueError:
                payload = {"code": "CloudError", "message": "undecodable error reply"}
            raise CloudError.from_payload(payload)


def encode_body(body: Any) -> bytes:
    """Serialize a handler result or request body to payload bytes."""
    if body is None:
        return b""
    if isinstance(body, bytes):
        return body
    if isinstance(body, BaseModel):
        return body.model_dump_json().encode("utf-8")
    return json.dumps(body).encode("utf-8")


def parse_body(payload: bytes, model: type):
    """Validate payload bytes into ``model``; malformed input is an InvalidRequest."""
    try:
        return model.model_validate_json(payload or b"{}")
    except ValidationError as e:
        raise InvalidRequest(f"malformed {model.__name__}: {e.error_count()} error(s)", cause=str(e))


def encode_envelope(envelope: ServiceEnvelope, max_payload: int) -> bytes:
    if len(envelope.payload) > max_payload:
        raise FrameTooLarge(f"payload of {len(envelope.payload)} bytes exceeds cap of {max_payload}")
    return envelope.model_dump_json().encode("utf-8")


def decode_envelope(data: bytes) -> ServiceEnvelope:
    try:
        return ServiceEnvelope.model_validate_json(data)
    except ValidationError as e:
        raise InvalidRequest("malformed envelope", cause=str(e))


def recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on clean EOF before the first byte."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def write_frame(sock: socket.socket, body: bytes) -> None:
    sock.sendall(HEADER.pack(len(body)) + body)


def read_frame(sock: socket.socket, max_frame: int) -> Optional[bytes]:
    header = recv_exact(sock, HEADER_SIZE)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > max_frame:
        raise FrameTooLarge(f"frame of {length} bytes exceeds limit of {max_frame}")
    if length == 0:
        return b""
    body = recv_exact(sock, length)
    if body is None:
        raise ConnectionError("connection closed before frame body")
    return body

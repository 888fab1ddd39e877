"""Data channel and staging types."""
from enum import Enum
from typing import List, Optional
from urllib.parse import quote, unquote, urlsplit

from pydantic import BaseModel, Field, model_validator

EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class DataChannelSpec(BaseModel):
    """
    Where a file space lives. Textual form: ``scheme://[token@]endpoint/root``,
    e.g. ``aftp://s3cret@127.0.0.1:7100/shared`` or ``local:///tmp/space``.
    """

    scheme: str = Field(min_length=1)
    endpoint: str = ""
    credentials: str = ""
    root: str = ""

    @classmethod
    def parse(cls, uri: str) -> "DataChannelSpec":
        parts = urlsplit(uri)
        if not parts.scheme:
            raise ValueError(f"channel URI needs a scheme: {uri!r}")
        endpoint = parts.hostname or ""
        if parts.port is not None:
            endpoint = f"{endpoint}:{parts.port}"
        root = unquote(parts.path)
        if endpoint:
            root = root.lstrip("/")
        return cls(
            scheme=parts.scheme,
            endpoint=endpoint,
            credentials=unquote(parts.username or ""),
            root=root,
        )

    def uri(self) -> str:
        auth = f"{quote(self.credentials, safe='')}@" if self.credentials else ""
        if self.endpoint:
            return f"{self.scheme}://{auth}{self.endpoint}/{self.root}"
        return f"{self.scheme}://{auth}{self.root}"


class Direction(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


class FileDescriptor(BaseModel):
    logical_name: str = Field(min_length=1)
    size_bytes: int = Field(0, ge=0)
    digest: str = ""  # SHA-256 hex; empty until the file has been stored
    channel: DataChannelSpec
    direction: Direction = Direction.INPUT
    # Name inside the job workspace when it differs from the stored name
    local_name: Optional[str] = None

    @property
    def workspace_name(self) -> str:
        return self.local_name or self.logical_name


class StagingPlan(BaseModel):
    inputs: List[FileDescriptor] = Field(default_factory=list)
    outputs: List[FileDescriptor] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_names(self) -> "StagingPlan":
        names = [f.logical_name for f in self.inputs + self.outputs]
        if len(names) != len(set(names)):
            raise ValueError("duplicate logical names in staging plan")
        return self


class StageOutReport(BaseModel):
    outputs: List[FileDescriptor] = Field(default_factory=list)
    missing: List[str] = Field(default_factory=list)


class LocateReply(BaseModel):
    channel: DataChannelSpec


class CatalogueReply(BaseModel):
    files: List[FileDescriptor] = Field(default_factory=list)

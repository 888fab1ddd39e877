"""
Container configuration.

A container is configured by a UTF-8 YAML file passed with ``--config``.
Schema (all keys optional except where noted)::

    node_id: 7f6c...              # UUID text, unique per cloud (generated if absent)
    listen_endpoint: 127.0.0.1:7000
    advertise_endpoint: null      # what peers should dial, defaults to listen_endpoint
    service_manifest:             # ordered; start order = list order
      - directory
      - name: executor
        options: {slots: 4}
    seed_peers: [127.0.0.1:7000]
    security_provider: anonymous  # anonymous | token
    credential_file: null
    persistence_provider: volatile  # volatile | durable | sql
    persistence_path: null          # directory (durable) or SQLAlchemy URL (sql)
    heartbeat_interval_ms: 1000
    license_max_nodes: 0            # 0 = unlimited
    license_allowed_services: []    # empty = any
    dispatch_timeout_s: 10
    drain_window_s: 5
    tariff: {granularity_s: 3600, rate: 1.0}
    ttl_seconds: 0
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
from uuid import uuid4

import yaml
from pydantic import BaseModel, Field, field_validator

from app.config import settings


def split_endpoint(endpoint: str) -> Tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class ServiceSpec(BaseModel):
    name: str = Field(min_length=1)
    options: Dict[str, Any] = Field(default_factory=dict)


class Tariff(BaseModel):
    granularity_s: int = Field(3600, ge=1)
    rate: float = Field(1.0, ge=0.0)


class ContainerConfig(BaseModel):
    node_id: str = Field(default_factory=lambda: str(uuid4()))
    listen_endpoint: str = "127.0.0.1:0"
    advertise_endpoint: Optional[str] = None
    service_manifest: List[ServiceSpec] = Field(default_factory=list)
    seed_peers: List[str] = Field(default_factory=list)
    security_provider: str = "anonymous"
    credential_file: Optional[str] = None
    persistence_provider: str = "volatile"
    persistence_path: Optional[str] = None
    heartbeat_interval_ms: int = Field(1000, ge=100)
    license_max_nodes: int = Field(0, ge=0)
    license_allowed_services: List[str] = Field(default_factory=list)
    dispatch_timeout_s: float = Field(default_factory=lambda: settings.DISPATCH_TIMEOUT_S, gt=0)
    max_message_bytes: int = Field(default_factory=lambda: settings.MAX_MESSAGE_BYTES, ge=1024)
    drain_window_s: float = Field(5.0, ge=0)
    snapshot_interval_s: float = Field(default_factory=lambda: settings.SNAPSHOT_INTERVAL_S, gt=0)
    tariff: Tariff = Field(default_factory=Tariff)
    ttl_seconds: int = Field(0, ge=0)
    log_level: Optional[str] = None

    @field_validator("service_manifest", mode="before")
    @classmethod
    def _names_as_specs(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [{"name": item} if isinstance(item, str) else item for item in value]
        return value

    @field_validator("listen_endpoint", "advertise_endpoint")
    @classmethod
    def _valid_endpoint(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            split_endpoint(value)
        return value

    @field_validator("seed_peers")
    @classmethod
    def _valid_seeds(cls, value: List[str]) -> List[str]:
        for seed in value:
            split_endpoint(seed)
        return value

    @property
    def heartbeat_interval_s(self) -> float:
        return self.heartbeat_interval_ms / 1000.0

    @property
    def manifest_names(self) -> List[str]:
        return [spec.name for spec in self.service_manifest]


def load_config(path: Union[str, Path]) -> ContainerConfig:
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    return ContainerConfig.model_validate(raw)


def dump_config(config: ContainerConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)

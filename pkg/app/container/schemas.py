"""Bodies of the container's built-in ``sys.*`` verbs."""
from typing import Any, Dict, List

from pydantic import BaseModel, Field

from app.container.service import ServiceRegistration
from app.fabric.schemas import StaticProfile
from app.transversal.identity import Credentials


class ContainerInfo(BaseModel):
    node_id: str
    endpoint: str
    services: List[ServiceRegistration] = Field(default_factory=list)
    static_profile: StaticProfile
    catalogue_node_id: str = ""
    registered: bool = False


class InstallRequest(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    name: str
    options: Dict[str, Any] = Field(default_factory=dict)


class UninstallRequest(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    name: str


class StopRequest(BaseModel):
    credentials: Credentials = Field(default_factory=Credentials)
    drain: bool = True

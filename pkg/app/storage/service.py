"""
Storage service: runs the aftp channel server on the storage node (the master
at desk scale) and keeps a catalogue of stored file descriptors.
"""
import logging
import os
from typing import Dict, Optional

from pydantic import BaseModel, Field

from app.config import settings
from app.container.service import Service, handles
from app.container.wire import ServiceEnvelope, parse_body
from app.storage.channels import get_channel_registry
from app.storage.schemas import CatalogueReply, DataChannelSpec, FileDescriptor, LocateReply

logger = logging.getLogger(__name__)


class StorageOptions(BaseModel):
    root: Optional[str] = None  # defaults to <STATE_DIR>/<node_id>/storage
    host: str = "127.0.0.1"
    port: int = Field(0, ge=0, le=65535)
    token: str = ""
    advertise_host: Optional[str] = None  # what stagers dial when host is a wildcard


class CatalogueChange(BaseModel):
    event: str  # "stored" | "deleted"
    name: str
    descriptor: Optional[FileDescriptor] = None


class StorageService(Service):
    name = "storage"
    stateful = True
    Options = StorageOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        self.root = self.options.root or os.path.join(settings.STATE_DIR, container.node_id, "storage")
        self.catalogue: Dict[str, FileDescriptor] = {}
        self.server = None
        self.channel: Optional[DataChannelSpec] = None

    def on_start(self) -> None:
        spec = DataChannelSpec(
            scheme="aftp",
            endpoint=f"{self.options.host}:{self.options.port}",
            credentials=self.options.token,
            root=self.root,
        )
        self.server = get_channel_registry().server(spec, root=self.root, on_change=self._on_change)
        self.channel = self.server.start()
        if self.options.advertise_host:
            port = self.channel.endpoint.rpartition(":")[2]
            self.channel = self.channel.model_copy(update={"endpoint": f"{self.options.advertise_host}:{port}"})

    def on_stop(self) -> None:
        if self.server is not None:
            self.server.stop()

    on_kill = on_stop

    def _on_change(self, event: str, name: str, descriptor: Optional[FileDescriptor]) -> None:
        # Called from transfer threads; route through the mailbox.
        self.post_self("sto.change", CatalogueChange(event=event, name=name, descriptor=descriptor))

    def export_state(self):
        return {"storage_catalogue": [fd.model_dump() for fd in self.catalogue.values()]}

    def restore_state(self, snapshot) -> None:
        self.catalogue = {fd.logical_name: fd for fd in snapshot.storage_catalogue}

    @handles("sto.locate")
    def locate(self, envelope: ServiceEnvelope) -> LocateReply:
        return LocateReply(channel=self.channel)

    @handles("sto.catalogue")
    def list_catalogue(self, envelope: ServiceEnvelope) -> CatalogueReply:
        return CatalogueReply(files=[self.catalogue[n] for n in sorted(self.catalogue)])

    @handles("sto.change")
    def change(self, envelope: ServiceEnvelope) -> None:
        change = parse_body(envelope.payload, CatalogueChange)
        if change.event == "stored" and change.descriptor is not None:
            self.catalogue[change.name] = change.descriptor
        else:
            self.catalogue.pop(change.name, None)
        self.mark_dirty()

"""
Catalog of the services compiled into the container binary.

Services are enabled by name from the manifest. Imports are deferred so a
container only loads the modules its manifest names.
"""
import importlib
from typing import Dict, List, Type

from app.container.service import Service
from app.errors import ServiceLoadFailure

BUILTIN_SERVICES: Dict[str, str] = {
    "directory": "app.directory.service:DirectoryService",
    "scheduler": "app.execution.scheduler:SchedulerService",
    "executor": "app.execution.executor:ExecutorService",
    "reservation": "app.reservation.service:ReservationService",
    "storage": "app.storage.service:StorageService",
    "provisioner": "app.fabric.provisioning:ProvisionerService",
    "api": "app.api.service:ApiService",
}


class ServiceCatalog:
    def __init__(self, entries: Dict[str, str] = None):
        self._entries = dict(BUILTIN_SERVICES if entries is None else entries)
        self._loaded: Dict[str, Type[Service]] = {}

    def register(self, name: str, service_cls: Type[Service]) -> None:
        self._loaded[name] = service_cls

    def names(self) -> List[str]:
        return sorted(set(self._entries) | set(self._loaded))

    def get(self, name: str) -> Type[Service]:
        if name in self._loaded:
            return self._loaded[name]
        target = self._entries.get(name)
        if target is None:
            raise ServiceLoadFailure(f"no service named {name!r}", cause="UnknownService")
        module_name, _, attr = target.partition(":")
        try:
            service_cls = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as e:
            raise ServiceLoadFailure(f"cannot load service {name!r}", cause=str(e))
        self._loaded[name] = service_cls
        return service_cls


default_catalog = ServiceCatalog()

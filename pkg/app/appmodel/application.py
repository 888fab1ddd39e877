"""
The Application Model on the client.

An application is the unit of deployment: it carries the credentials and
channels every one of its jobs inherits, and an application manager
specialised for its programming model turns work units into jobs and
routes lifecycle events back to them.
"""
import importlib
import logging
import threading
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

from app.appmodel.client import CloudClient
from app.appmodel.schemas import ApplicationDescriptor, WorkUnit
from app.container.wire import parse_body
from app.errors import AppStopped, CloudError, UnknownModel, WaitTimeout
from app.execution.schemas import (
    ApplicationRecord,
    AppRef,
    AppState,
    AppStatus,
    EventsReply,
    EventsRequest,
    JobEvent,
    JobPayload,
    JobRef,
    JobSpec,
    JobState,
    ProgrammingModel,
    RegisterApplication,
    SubmitAck,
    SubmitJobs,
)
from app.storage.channels import get_channel_registry
from app.storage.schemas import DataChannelSpec, FileDescriptor

logger = logging.getLogger(__name__)

EventCallback = Callable[[WorkUnit, JobEvent], None]

SCHEDULER = "scheduler"


class ApplicationManager:
    """Translates work units into jobs and applies events back to units."""

    model: ProgrammingModel = ProgrammingModel.TASK

    def __init__(self, application: "Application"):
        self.application = application

    def to_job(self, unit: WorkUnit) -> JobSpec:
        return JobSpec(
            job_id=unit.unit_id,
            payload=unit.payload,
            staging=unit.staging,
            max_attempts=unit.max_attempts,
        )

    def on_event(self, unit: WorkUnit, event: JobEvent) -> None:
        """Hook for model runtimes; runs on the event delivery thread."""


# Resolved lazily: model runtimes build on this module.
MANAGERS: Dict[ProgrammingModel, str] = {
    ProgrammingModel.TASK: "app.models.task:TaskManager",
    ProgrammingModel.THREAD: "app.models.thread:ThreadManager",
    ProgrammingModel.MAPREDUCE: "app.models.mapreduce:MapReduceManager",
}


def manager_class(model: Union[str, ProgrammingModel]) -> type:
    try:
        target = MANAGERS[ProgrammingModel(model)]
    except (ValueError, KeyError):
        raise UnknownModel(f"no programming model {model!r}")
    module_name, _, attr = target.partition(":")
    return getattr(importlib.import_module(module_name), attr)


class EventPump(threading.Thread):
    """Polls the scheduler's event log and delivers events on its own thread."""

    def __init__(self, application: "Application", interval_s: float):
        super().__init__(name=f"events-{application.app_id[:8]}", daemon=True)
        self.application = application
        self.interval_s = interval_s
        self._halted = threading.Event()

    def run(self) -> None:
        while not self._halted.is_set():
            try:
                self.application.poll_events()
            except Exception as e:
                logger.warning(f"Event poll for {self.application.app_id} failed: {e}")
            self._halted.wait(self.interval_s)

    def stop(self) -> None:
        self._halted.set()


class Application:
    def __init__(self, client: CloudClient, descriptor: ApplicationDescriptor):
        self.client = client
        self.descriptor = descriptor
        self.manager: ApplicationManager = manager_class(descriptor.model)(self)
        self.units: Dict[str, WorkUnit] = {}
        self._pending: List[str] = []
        self._cursor = 0
        self._events: List[JobEvent] = []
        self._subscribers: List[EventCallback] = []
        self._changed = threading.Condition()
        self._poll_lock = threading.Lock()
        self._pump: Optional[EventPump] = None

    @property
    def app_id(self) -> str:
        return self.descriptor.app_id

    @property
    def state(self) -> AppState:
        return self.descriptor.state

    # ---------------------------------------------------------------- units

    def add_unit(self, unit: Union[WorkUnit, JobPayload]) -> str:
        if self.state == AppState.STOPPED:
            raise AppStopped(f"application {self.app_id} is stopped")
        if isinstance(unit, JobPayload):
            unit = WorkUnit(payload=unit)
        unit = unit.model_copy(update={"app_id": self.app_id})
        with self._changed:
            self.units[unit.unit_id] = unit
            self._pending.append(unit.unit_id)
        return unit.unit_id

    def submit(self) -> SubmitAck:
        """Flush pending units as jobs; may be called again after more add_unit calls."""
        if self.state == AppState.STOPPED:
            raise AppStopped(f"application {self.app_id} is stopped")
        with self._changed:
            pending = [self.units[u] for u in self._pending]
        jobs = [self.manager.to_job(u) for u in pending]
        body = self.client.call(
            SCHEDULER, "exec.submit",
            SubmitJobs(credentials=self.descriptor.credentials, app_id=self.app_id, jobs=jobs),
        )
        ack = parse_body(body, SubmitAck)
        with self._changed:
            flushed = set(ack.job_ids)
            self._pending = [u for u in self._pending if u not in flushed]
            for unit_id in flushed:
                if self.units[unit_id].state == JobState.CREATED:
                    self.units[unit_id] = self.units[unit_id].model_copy(update={"state": JobState.QUEUED})
            if jobs and self.state != AppState.STOPPED:
                self.descriptor = self.descriptor.model_copy(update={"state": AppState.RUNNING})
            elif not self.units:
                self.descriptor = self.descriptor.model_copy(update={"state": AppState.FINISHED})
            self._changed.notify_all()
        if jobs:
            self._ensure_pump()
        return ack

    def unit(self, unit_id: str) -> WorkUnit:
        with self._changed:
            return self.units[unit_id]

    def wait(self, timeout: Optional[float] = None) -> Dict[str, JobState]:
        """Block until every submitted unit is terminal."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._changed:
            while not self._all_terminal():
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    open_units = sum(1 for u in self.units.values() if not u.terminal)
                    raise WaitTimeout(f"{open_units} units still running after {timeout}s")
                self._changed.wait(0.2 if remaining is None else min(0.2, remaining))
                if self._pump is None or not self._pump.is_alive():
                    self._changed.release()
                    try:
                        self.poll_events()
                    finally:
                        self._changed.acquire()
            if not self._pending and self.state != AppState.STOPPED:
                self.descriptor = self.descriptor.model_copy(update={"state": AppState.FINISHED})
            return {u.unit_id: u.state for u in self.units.values()}

    def wait_unit(self, unit_id: str, timeout: Optional[float] = None) -> WorkUnit:
        """Block until one unit is terminal."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._changed:
            while not self.units[unit_id].terminal:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise WaitTimeout(f"unit {unit_id} still {self.units[unit_id].state.value} after {timeout}s")
                self._changed.wait(0.2 if remaining is None else min(0.2, remaining))
            return self.units[unit_id]

    def _all_terminal(self) -> bool:
        return all(u.terminal for u in self.units.values() if u.unit_id not in self._pending)

    def stop(self) -> ApplicationRecord:
        body = self.client.call(
            SCHEDULER, "exec.app.stop", AppRef(credentials=self.descriptor.credentials, app_id=self.app_id)
        )
        record = parse_body(body, ApplicationRecord)
        self.poll_events()
        with self._changed:
            self._pending.clear()
            self.descriptor = self.descriptor.model_copy(update={"state": AppState.STOPPED})
            self._changed.notify_all()
        return record

    def abort_unit(self, unit_id: str) -> None:
        self.client.call(SCHEDULER, "exec.abort", JobRef(credentials=self.descriptor.credentials, job_id=unit_id))
        self.poll_events()

    def status(self) -> AppStatus:
        return parse_body(self.client.call(SCHEDULER, "exec.app.status", AppRef(app_id=self.app_id)), AppStatus)

    def close(self) -> None:
        if self._pump is not None:
            self._pump.stop()

    # ---------------------------------------------------------------- events

    def on_event(self, callback: EventCallback) -> None:
        """Subscribe; events seen so far are replayed to the new subscriber first."""
        with self._changed:
            replay = list(self._events)
            self._subscribers.append(callback)
        for event in replay:
            self._deliver(callback, event)
        self._ensure_pump()

    def _ensure_pump(self) -> None:
        if self._pump is None or not self._pump.is_alive():
            self._pump = EventPump(self, self.client.config.poll_interval_s)
            self._pump.start()

    def poll_events(self) -> int:
        """Fetch new events once; returns how many were applied."""
        with self._poll_lock:
            body = self.client.call(SCHEDULER, "exec.events", EventsRequest(app_id=self.app_id, cursor=self._cursor))
            reply = parse_body(body, EventsReply)
            applied = []
            with self._changed:
                self._cursor = reply.cursor
                for event in reply.events:
                    unit = self.units.get(event.job_id)
                    if unit is None or event.unit_seq <= unit.last_seq:
                        continue
                    unit = unit.model_copy(update={
                        "state": event.state,
                        "last_seq": event.unit_seq,
                        "result": event.result if event.result is not None else unit.result,
                        "failure_cause": event.failure_cause,
                    })
                    self.units[event.job_id] = unit
                    self._events.append(event)
                    applied.append((unit, event))
                if reply.app_state in (AppState.STOPPED, AppState.FINISHED) and self.state != AppState.STOPPED:
                    self.descriptor = self.descriptor.model_copy(update={"state": reply.app_state})
                subscribers = list(self._subscribers)
                self._changed.notify_all()
            for unit, event in applied:
                self.manager.on_event(unit, event)
                for callback in subscribers:
                    self._deliver(callback, event)
            return len(applied)

    def _deliver(self, callback: EventCallback, event: JobEvent) -> None:
        try:
            callback(self.unit(event.job_id), event)
        except Exception as e:
            logger.warning(f"Event subscriber raised: {e}")

    # ---------------------------------------------------------------- files

    def channel(self, index: int = 0) -> DataChannelSpec:
        return self.descriptor.channels[index]

    def upload(self, logical_name: str, content: Union[bytes, Path], channel: Optional[DataChannelSpec] = None) -> FileDescriptor:
        spec = channel or self.channel()
        data = Path(content).read_bytes() if isinstance(content, Path) else content
        descriptor = get_channel_registry().client(spec).put(logical_name, data)
        self.descriptor.shared_inputs.append(descriptor)
        return descriptor

    def download(self, descriptor: Union[FileDescriptor, str], target: Optional[Path] = None) -> bytes:
        if isinstance(descriptor, str):
            descriptor = FileDescriptor(logical_name=descriptor, channel=self.channel())
        content = get_channel_registry().client(descriptor.channel).get(descriptor.logical_name)
        if target is not None:
            Path(target).write_bytes(content)
        return content

    def __enter__(self) -> "Application":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def create_application(
    client: CloudClient,
    model: Union[str, ProgrammingModel],
    display_name: str = "",
    channels: Optional[List[DataChannelSpec]] = None,
) -> Application:
    """Register a new application with the scheduler and attach its manager."""
    manager_class(model)
    descriptor = ApplicationDescriptor(
        model=ProgrammingModel(model),
        display_name=display_name,
        credentials=client.credentials,
        channels=channels if channels is not None else _default_channels(client),
    )
    body = client.call(SCHEDULER, "exec.app.register", RegisterApplication(
        credentials=descriptor.credentials,
        app_id=descriptor.app_id,
        model=descriptor.model,
        display_name=display_name,
        channels=descriptor.channels,
    ))
    record = parse_body(body, ApplicationRecord)
    logger.info(f"Created {record.model.value} application {record.app_id}")
    return Application(client, descriptor)


def _default_channels(client: CloudClient) -> List[DataChannelSpec]:
    try:
        return client.channels()
    except CloudError as e:
        logger.info(f"No storage channel available: {e.code}")
        return []


def error_from_cause(cause: Optional[str]) -> CloudError:
    """Rebuild the error behind a job failure cause such as ``"OperationError: boom"``."""
    code, _, message = (cause or "OperationError").partition(": ")
    return CloudError.from_payload({"code": code, "message": message or code})

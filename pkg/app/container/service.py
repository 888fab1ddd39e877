"""
Service base class and the mailbox host that serializes a service's messages.

A service is a plain class with a ``name`` and handler methods marked with
``@handles("kind")``. Each installed service gets a ServiceHost: one thread
draining one queue, so a service sees its messages one at a time in arrival
order and never needs a lock for its own state.
"""
import logging
import queue
import threading
import time
from concurrent.futures import Future
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, ClassVar, Dict, List, Optional, Type

from pydantic import BaseModel, ConfigDict

from app.container.wire import ServiceEnvelope, encode_body
from app.errors import CloudError, DrainTimeout, InvalidRequest, NotInstalled, ServiceError

if TYPE_CHECKING:
    from app.container.container import Container

logger = logging.getLogger(__name__)

_STOP = object()


def handles(kind: str) -> Callable:
    """Mark a method as the handler for envelopes of ``kind``."""

    def decorator(fn: Callable) -> Callable:
        fn._handles = kind
        return fn

    return decorator


class ServiceState(str, Enum):
    LOADED = "loaded"
    STARTED = "started"
    STOPPED = "stopped"
    FAILED = "failed"


class ServiceRegistration(BaseModel):
    name: str
    state: ServiceState


class NoOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Service:
    """Base class for everything a container can host."""

    name: ClassVar[str] = ""
    stateful: ClassVar[bool] = False
    Options: ClassVar[Type[BaseModel]] = NoOptions
    _handlers: ClassVar[Dict[str, str]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        handlers: Dict[str, str] = {}
        for base in reversed(cls.__mro__):
            for attr, value in vars(base).items():
                kind = getattr(value, "_handles", None)
                if kind:
                    handlers[kind] = attr
        cls._handlers = handlers

    def __init__(self, container: "Container", options: Optional[Dict[str, Any]] = None):
        self.container = container
        self.options = self.Options.model_validate(options or {})
        self.host: Optional["ServiceHost"] = None
        self.dirty = False
        self.persist_requested = False

    # Lifecycle hooks, all run on the service's own thread except on_kill.
    def on_start(self) -> None:
        pass

    def on_stop(self) -> None:
        pass

    def on_kill(self) -> None:
        pass

    def busy(self) -> bool:
        """True while work accepted by this service is still in progress."""
        return False

    def advertise(self) -> Dict[str, int]:
        """Capacity attributes carried on this node's heartbeats."""
        return {}

    def export_state(self) -> Dict[str, Any]:
        return {}

    def restore_state(self, snapshot: Any) -> None:
        pass

    @classmethod
    def kinds(cls) -> List[str]:
        return sorted(cls._handlers)

    def handle(self, envelope: ServiceEnvelope) -> bytes:
        attr = self._handlers.get(envelope.kind)
        if attr is None:
            raise InvalidRequest(f"service {self.name!r} does not handle {envelope.kind!r}")
        return encode_body(getattr(self, attr)(envelope))

    # Helpers for subclasses.
    def mark_dirty(self, persist: bool = False) -> None:
        self.dirty = True
        if persist:
            self.persist_requested = True

    def post_self(self, kind: str, body: Any = None) -> None:
        if self.host is not None:
            self.host.post(kind, encode_body(body))

    def every(self, interval_s: float, kind: str) -> None:
        """Post ``kind`` to this service every ``interval_s`` (coalesced)."""
        if self.host is not None:
            self.host.add_timer(interval_s, kind)

    @property
    def node_id(self) -> str:
        return self.container.node_id


class PeriodicTimer(threading.Thread):
    def __init__(self, interval_s: float, fn: Callable[[], None], name: str):
        super().__init__(name=name, daemon=True)
        self.interval_s = interval_s
        self.fn = fn
        self.stopped = threading.Event()

    def run(self) -> None:
        while not self.stopped.wait(self.interval_s):
            try:
                self.fn()
            except Exception:
                logger.exception(f"Timer {self.name} failed")

    def cancel(self) -> None:
        self.stopped.set()


class ServiceHost:
    """Mailbox thread, timers and drain bookkeeping for one service."""

    def __init__(self, service: Service, container: "Container"):
        self.service = service
        self.container = container
        self.registration = ServiceRegistration(name=service.name, state=ServiceState.LOADED)
        service.host = self
        self._queue: "queue.Queue" = queue.Queue()
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._inflight = 0
        self._accepting = False
        self._pending_timers: set = set()
        self._timers: List[PeriodicTimer] = []
        self._thread: Optional[threading.Thread] = None

    @property
    def name(self) -> str:
        return self.service.name

    @property
    def accepting(self) -> bool:
        return self._accepting

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._run, name=f"{self.container.node_id[:8]}-{self.name}", daemon=True
        )
        self._thread.start()
        with self._lock:
            self._accepting = True
        try:
            self.run_in_thread(self.service.on_start).result()
        except BaseException:
            self.registration = self.registration.model_copy(update={"state": ServiceState.FAILED})
            self._halt(join=True)
            raise
        self.registration = self.registration.model_copy(update={"state": ServiceState.STARTED})

    def submit(self, envelope: ServiceEnvelope) -> Future:
        future: Future = Future()
        with self._lock:
            if not self._accepting:
                raise NotInstalled(f"service {self.name!r} is not accepting messages")
            self._inflight += 1
        self._queue.put((envelope, future))
        return future

    def run_in_thread(self, fn: Callable[[], Any]) -> Future:
        future: Future = Future()
        with self._lock:
            self._inflight += 1
        self._queue.put((fn, future))
        return future

    def post(self, kind: str, payload: bytes = b"") -> None:
        envelope = ServiceEnvelope(
            source_node=self.container.node_id,
            target_node=self.container.node_id,
            target_service=self.name,
            kind=kind,
            payload=payload,
        )
        try:
            self.submit(envelope)
        except NotInstalled:
            pass

    def add_timer(self, interval_s: float, kind: str) -> None:
        def fire() -> None:
            with self._lock:
                if kind in self._pending_timers:
                    return
                self._pending_timers.add(kind)
            self.post(kind)

        timer = PeriodicTimer(interval_s, fire, name=f"{self.name}:{kind}")
        self._timers.append(timer)
        timer.start()

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                break
            work, future = item
            try:
                if isinstance(work, ServiceEnvelope):
                    future.set_result(self._handle(work))
                else:
                    future.set_result(work())
            except BaseException as e:
                future.set_exception(e)
            finally:
                with self._lock:
                    self._inflight -= 1
                    self._idle.notify_all()

    def _handle(self, envelope: ServiceEnvelope) -> ServiceEnvelope:
        node_id = self.container.node_id
        with self._lock:
            self._pending_timers.discard(envelope.kind)
        try:
            body = self.service.handle(envelope)
            reply = envelope.reply(body, source_node=node_id)
        except CloudError as e:
            reply = envelope.error_reply(e, source_node=node_id)
        except Exception as e:
            logger.exception(f"Handler {self.name}/{envelope.kind} raised")
            reply = envelope.error_reply(ServiceError(str(e), cause=type(e).__name__), source_node=node_id)
        self._publish_state()
        return reply

    def _publish_state(self) -> None:
        service = self.service
        if not service.stateful or not service.dirty:
            return
        try:
            self.container.snapshots.publish(service.name, service.export_state())
            service.dirty = False
            if service.persist_requested:
                service.persist_requested = False
                self.container.snapshots.persist_now()
        except CloudError as e:
            logger.error(f"Persisting {service.name} state failed: {e}")

    def drain(self, window_s: float) -> None:
        """Stop accepting, then wait for queued and busy work to finish."""
        deadline = time.monotonic() + window_s
        with self._lock:
            self._accepting = False
            while self._inflight > 0 or self.service.busy():
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self._accepting = True
                    raise DrainTimeout(f"service {self.name!r} still busy after {window_s}s")
                self._idle.wait(min(0.05, remaining))

    def stop(self) -> None:
        with self._lock:
            self._accepting = False
        for timer in self._timers:
            timer.cancel()
        try:
            self.run_in_thread(self.service.on_stop).result(timeout=self.container.config.drain_window_s + 5)
        except Exception as e:
            logger.error(f"Stopping {self.name} failed: {e}")
        self._publish_state()
        self._halt(join=True)
        self.registration = self.registration.model_copy(update={"state": ServiceState.STOPPED})

    def kill(self) -> None:
        with self._lock:
            self._accepting = False
        for timer in self._timers:
            timer.cancel()
        try:
            self.service.on_kill()
        except Exception as e:
            logger.error(f"Killing {self.name} raised: {e}")
        self._halt(join=False)
        self.registration = self.registration.model_copy(update={"state": ServiceState.STOPPED})

    def _halt(self, join: bool) -> None:
        with self._lock:
            self._accepting = False
        self._queue.put(_STOP)
        if join and self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=5)

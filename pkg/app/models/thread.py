"""
Thread model: a remote unit of work driven through the same calls as a
local thread: create, start, join, abort.
"""
import json
from enum import Enum
from typing import Any, Dict, Optional, Union

from app.appmodel.application import Application, ApplicationManager, error_from_cause
from app.appmodel.schemas import WorkUnit
from app.errors import AlreadyStarted, InvalidRequest, JoinTimeout, NotStarted, WaitTimeout
from app.execution.schemas import JobPayload, JobState, ProgrammingModel


class ThreadManager(ApplicationManager):
    model = ProgrammingModel.THREAD


class ThreadState(str, Enum):
    CREATED = "created"
    STARTED = "started"
    RUNNING = "running"
    FINISHED = "finished"
    ABORTED = "aborted"


_FROM_JOB = {
    JobState.CREATED: ThreadState.STARTED,
    JobState.QUEUED: ThreadState.STARTED,
    JobState.STAGING: ThreadState.STARTED,
    JobState.RUNNING: ThreadState.RUNNING,
    JobState.COMPLETED: ThreadState.FINISHED,
    JobState.FAILED: ThreadState.FINISHED,
    JobState.ABORTED: ThreadState.ABORTED,
}


class RemoteThread:
    def __init__(
        self,
        app: Application,
        operation: str,
        params: Union[bytes, Dict[str, Any], None] = None,
        max_attempts: int = 1,
    ):
        if app.descriptor.model != ProgrammingModel.THREAD:
            raise InvalidRequest(f"application {app.app_id} is not a thread application")
        if params is None:
            params = b""
        elif not isinstance(params, bytes):
            params = json.dumps(params).encode("utf-8")
        self.app = app
        self.unit = WorkUnit(payload=JobPayload(operation=operation, params=params), max_attempts=max_attempts)
        self._started = False

    @property
    def thread_id(self) -> str:
        return self.unit.unit_id

    @property
    def state(self) -> ThreadState:
        if not self._started:
            return ThreadState.CREATED
        return _FROM_JOB[self.app.unit(self.thread_id).state]

    def start(self) -> "RemoteThread":
        if self._started:
            raise AlreadyStarted(f"thread {self.thread_id} was already started")
        self.app.add_unit(self.unit)
        self.app.submit()
        self._started = True
        return self

    def join(self, timeout: Optional[float] = None) -> bytes:
        """Result bytes once finished; the remote error is raised here."""
        if not self._started:
            raise NotStarted(f"thread {self.thread_id} was never started")
        try:
            unit = self.app.wait_unit(self.thread_id, timeout)
        except WaitTimeout:
            raise JoinTimeout(f"thread {self.thread_id} did not finish within {timeout}s")
        if unit.state == JobState.COMPLETED:
            return unit.result or b""
        if unit.state == JobState.ABORTED:
            raise error_from_cause("Aborted")
        raise error_from_cause(unit.failure_cause)

    def join_value(self, timeout: Optional[float] = None) -> Any:
        """join() with the result decoded as JSON."""
        return json.loads(self.join(timeout).decode("utf-8"))

    def abort(self) -> None:
        if not self._started:
            raise NotStarted(f"thread {self.thread_id} was never started")
        self.app.abort_unit(self.thread_id)

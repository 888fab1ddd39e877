"""
Task model: bags of independent tasks.

Each task becomes one job; tasks carry no ordering between them and fail
individually.
"""
import json
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel

from app.appmodel.application import Application, ApplicationManager
from app.appmodel.schemas import WorkUnit
from app.errors import InvalidRequest
from app.execution.schemas import JobPayload, JobState, ProgrammingModel
from app.storage.schemas import FileDescriptor, StagingPlan

logger = logging.getLogger(__name__)


class TaskManager(ApplicationManager):
    model = ProgrammingModel.TASK


class TaskResult(BaseModel):
    unit_id: str
    state: JobState
    result: Optional[bytes] = None
    failure_cause: Optional[str] = None


def _params(params: Union[bytes, Dict[str, Any], None]) -> bytes:
    if params is None:
        return b""
    if isinstance(params, bytes):
        return params
    return json.dumps(params).encode("utf-8")


def task(
    operation: str,
    params: Union[bytes, Dict[str, Any], None] = None,
    inputs: Sequence[FileDescriptor] = (),
    outputs: Sequence[FileDescriptor] = (),
    max_attempts: int = 3,
) -> WorkUnit:
    return WorkUnit(
        payload=JobPayload(operation=operation, params=_params(params)),
        staging=StagingPlan(inputs=list(inputs), outputs=list(outputs)),
        max_attempts=max_attempts,
    )


def run_process(command: str, args: Iterable[Any] = (), **kwargs) -> WorkUnit:
    return task("run_process", {"command": command, "args": [str(a) for a in args]}, **kwargs)


def copy_file(src: str, dst: str, **kwargs) -> WorkUnit:
    return task("copy_file", {"src": src, "dst": dst}, **kwargs)


def rename_file(src: str, dst: str, **kwargs) -> WorkUnit:
    return task("rename_file", {"src": src, "dst": dst}, **kwargs)


def delete_file(path: str, **kwargs) -> WorkUnit:
    return task("delete_file", {"path": path}, **kwargs)


def run_tasks(
    app: Application,
    tasks: Sequence[WorkUnit],
    fire_and_forget: bool = False,
    timeout: Optional[float] = None,
) -> List[TaskResult]:
    """
    Submit every task as one job. With ``fire_and_forget`` the call returns
    right after the scheduler acknowledged the submission; results then come
    back in submission order with their state at that moment.
    """
    if app.descriptor.model != ProgrammingModel.TASK:
        raise InvalidRequest(f"application {app.app_id} is not a task application")
    unit_ids = [app.add_unit(t) for t in tasks]
    app.submit()
    if not fire_and_forget:
        app.wait(timeout)
    results = []
    for unit_id in unit_ids:
        unit = app.unit(unit_id)
        results.append(TaskResult(unit_id=unit_id, state=unit.state, result=unit.result, failure_cause=unit.failure_cause))
    failed = sum(1 for r in results if r.state == JobState.FAILED)
    if failed:
        logger.info(f"{failed} of {len(results)} tasks failed in application {app.app_id}")
    return results

"""Run an expanded sweep as a bag of tasks and report per combination."""
import json
import logging
from collections import Counter
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, Field

from app.appmodel.application import Application
from app.appmodel.schemas import WorkUnit
from app.errors import InvalidRequest
from app.execution.schemas import JobPayload, JobState, ProgrammingModel
from app.storage.schemas import DataChannelSpec, FileDescriptor, StagingPlan
from app.sweep.template import Combination, TaskTemplate, expand

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[Dict[str, int]], None]


class SweepEntry(BaseModel):
    index: int
    parameters: Dict[str, str]
    unit_id: str
    state: JobState = JobState.CREATED
    failure_cause: Optional[str] = None
    outputs: List[FileDescriptor] = Field(default_factory=list)


class SweepReport(BaseModel):
    template: str
    entries: List[SweepEntry] = Field(default_factory=list)
    counts: Dict[str, int] = Field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.entries)


def to_unit(combo: Combination, channel: Optional[DataChannelSpec], max_attempts: int = 1) -> WorkUnit:
    """A single command runs as itself; several run as one task_sequence."""
    if len(combo.commands) == 1:
        command = combo.commands[0]
        payload = JobPayload(operation=command.operation, params=json.dumps(command.params).encode("utf-8"))
    else:
        steps = [{"operation": c.operation, "params": c.params} for c in combo.commands]
        payload = JobPayload(operation="task_sequence", params=json.dumps({"steps": steps}).encode("utf-8"))
    if (combo.inputs or combo.outputs) and channel is None:
        raise InvalidRequest("the sweep stages files but the application has no channel")
    staging = StagingPlan(
        inputs=[FileDescriptor(logical_name=f.name, channel=channel, local_name=f.workspace_name) for f in combo.inputs],
        outputs=[FileDescriptor(logical_name=f.name, channel=channel, local_name=f.workspace_name) for f in combo.outputs],
    )
    return WorkUnit(payload=payload, staging=staging, max_attempts=max_attempts)


def _counts(app: Application, unit_ids: List[str]) -> Dict[str, int]:
    counts = Counter(app.unit(u).state.value for u in unit_ids)
    return {state.value: counts.get(state.value, 0) for state in JobState}


def run_sweep(
    app: Application,
    template: TaskTemplate,
    timeout: Optional[float] = None,
    progress: Optional[ProgressCallback] = None,
    max_attempts: int = 1,
) -> SweepReport:
    if app.descriptor.model != ProgrammingModel.TASK:
        raise InvalidRequest(f"application {app.app_id} is not a task application")
    combos = expand(template)
    channel = app.descriptor.channels[0] if app.descriptor.channels else None
    entries = []
    for combo in combos:
        unit_id = app.add_unit(to_unit(combo, channel, max_attempts))
        entries.append(SweepEntry(index=combo.index, parameters=combo.parameters, unit_id=unit_id))
    logger.info(f"Sweep {template.name}: submitting {len(entries)} combinations")
    app.submit()
    unit_ids = [e.unit_id for e in entries]
    if progress is not None:
        app.on_event(lambda unit, event: progress(_counts(app, unit_ids)) if event.state.terminal else None)
    app.wait(timeout)

    outputs: Dict[str, List[FileDescriptor]] = {job.job_id: job.outputs for job in app.status().jobs}
    final = []
    for entry in entries:
        unit = app.unit(entry.unit_id)
        final.append(entry.model_copy(update={
            "state": unit.state,
            "failure_cause": unit.failure_cause,
            "outputs": outputs.get(entry.unit_id, []),
        }))
    report = SweepReport(template=template.name, entries=final, counts=_counts(app, unit_ids))
    logger.info(f"Sweep {template.name} finished: {report.counts}")
    return report

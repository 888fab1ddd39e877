"""
Staging: materialize a job's inputs in its workspace before it runs and
upload its declared outputs afterwards.
"""
import logging
from pathlib import Path
from typing import Optional

from app.errors import CloudError, DigestMismatch, StageFailure
from app.storage.channels import ChannelRegistry, atomic_write, confine, get_channel_registry, sha256_hex
from app.storage.schemas import Direction, StageOutReport, StagingPlan

logger = logging.getLogger(__name__)


def stage_in(plan: StagingPlan, workspace: Path, registry: Optional[ChannelRegistry] = None) -> None:
    registry = registry or get_channel_registry()
    for fd in plan.inputs:
        try:
            content = registry.client(fd.channel).get(fd.logical_name)
            if fd.digest and sha256_hex(content) != fd.digest:
                raise DigestMismatch(f"{fd.logical_name} does not match its descriptor digest")
            atomic_write(confine(workspace, fd.workspace_name), content)
        except CloudError as e:
            logger.info(f"Stage-in of {fd.logical_name} failed: {e.code}")
            raise StageFailure(f"cannot stage in {fd.logical_name}", cause=e.code)


def stage_out(plan: StagingPlan, workspace: Path, registry: Optional[ChannelRegistry] = None) -> StageOutReport:
    registry = registry or get_channel_registry()
    report = StageOutReport()
    for fd in plan.outputs:
        try:
            path = confine(workspace, fd.workspace_name)
        except CloudError as e:
            raise StageFailure(f"output name {fd.workspace_name} rejected", cause=e.code)
        if not path.is_file():
            report.missing.append(fd.logical_name)
            continue
        try:
            stored = registry.client(fd.channel).put(fd.logical_name, path.read_bytes())
        except CloudError as e:
            logger.info(f"Stage-out of {fd.logical_name} failed: {e.code}")
            raise StageFailure(f"cannot stage out {fd.logical_name}", cause=e.code)
        report.outputs.append(stored.model_copy(update={"direction": Direction.OUTPUT, "local_name": fd.local_name}))
    if report.missing:
        logger.info(f"Declared outputs never produced: {report.missing}")
    return report

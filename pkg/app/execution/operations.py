"""
Operation registry: the named, pre-registered code an executor can run.

A job payload names an operation plus parameter bytes; the operation runs
inside the job workspace and returns result bytes. Parameters of the
built-in operations are JSON objects.
"""
import json
import logging
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, List, Mapping, Optional

from app.errors import Aborted, CloudError, OperationError, UnknownOperation
from app.storage.channels import confine

logger = logging.getLogger(__name__)

OUTPUT_TAIL = 2000


@dataclass
class OperationContext:
    workspace: Path
    job_id: str = ""
    app_id: str = ""
    attempt: int = 1
    node_id: str = ""
    cancelled: threading.Event = field(default_factory=threading.Event)
    _processes: List[subprocess.Popen] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def path(self, name: str) -> Path:
        return confine(self.workspace, name)

    def check_cancelled(self) -> None:
        if self.cancelled.is_set():
            raise Aborted(f"job {self.job_id} was aborted")

    def track(self, process: subprocess.Popen) -> None:
        with self._lock:
            self._processes.append(process)
        if self.cancelled.is_set():
            process.kill()

    def cancel(self) -> None:
        self.cancelled.set()
        with self._lock:
            processes = list(self._processes)
        for process in processes:
            if process.poll() is None:
                process.kill()


Operation = Callable[[bytes, OperationContext], bytes]


def json_params(params: bytes) -> Dict[str, Any]:
    if not params:
        return {}
    try:
        value = json.loads(params.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise OperationError(f"parameters are not a JSON object: {e}")
    if not isinstance(value, dict):
        raise OperationError("parameters are not a JSON object")
    return value


def _require(params: Dict[str, Any], *names: str) -> List[Any]:
    missing = [n for n in names if n not in params]
    if missing:
        raise OperationError(f"missing parameters: {', '.join(missing)}")
    return [params[n] for n in names]


# ---------------------------------------------------------------- built-ins


def run_process(params: bytes, ctx: OperationContext) -> bytes:
    """{"command": str, "args": [..]} -> the process's stdout."""
    p = json_params(params)
    (command,) = _require(p, "command")
    argv = [str(command), *[str(a) for a in p.get("args", [])]]
    try:
        process = subprocess.Popen(argv, cwd=ctx.workspace, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    except OSError as e:
        raise OperationError(f"cannot start {command}: {e}")
    ctx.track(process)
    while True:
        try:
            stdout, stderr = process.communicate(timeout=0.1)
            break
        except subprocess.TimeoutExpired:
            continue
    ctx.check_cancelled()
    if process.returncode != 0:
        tail = stderr.decode("utf-8", errors="replace")[-OUTPUT_TAIL:]
        raise OperationError(f"{command} exited with status {process.returncode}: {tail}".strip())
    return stdout


def copy_file(params: bytes, ctx: OperationContext) -> bytes:
    src, dst = _require(json_params(params), "src", "dst")
    source, target = ctx.path(src), ctx.path(dst)
    if not source.is_file():
        raise OperationError(f"{src} does not exist")
    target.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(source, target)
    return b""


def rename_file(params: bytes, ctx: OperationContext) -> bytes:
    src, dst = _require(json_params(params), "src", "dst")
    source, target = ctx.path(src), ctx.path(dst)
    if not source.exists():
        raise OperationError(f"{src} does not exist")
    target.parent.mkdir(parents=True, exist_ok=True)
    source.replace(target)
    return b""


def delete_file(params: bytes, ctx: OperationContext) -> bytes:
    (path,) = _require(json_params(params), "path")
    ctx.path(path).unlink(missing_ok=True)
    return b""


def sleep(params: bytes, ctx: OperationContext) -> bytes:
    seconds = float(json_params(params).get("seconds", 0))
    if ctx.cancelled.wait(seconds):
        ctx.check_cancelled()
    return b""


def _fib(n: int) -> int:
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def fib(params: bytes, ctx: OperationContext) -> bytes:
    (n,) = _require(json_params(params), "n")
    if int(n) < 0:
        raise OperationError("fib is undefined for negative n")
    return json.dumps(_fib(int(n))).encode("utf-8")


def echo(params: bytes, ctx: OperationContext) -> bytes:
    return params


def fail(params: bytes, ctx: OperationContext) -> bytes:
    raise OperationError(str(json_params(params).get("message", "requested failure")))


# ---------------------------------------------------------------- registry


class OperationRegistry:
    """Immutable name -> operation map."""

    def __init__(self, operations: Mapping[str, Operation]):
        self._operations = MappingProxyType(dict(operations))

    def names(self) -> List[str]:
        return sorted(self._operations)

    def __contains__(self, name: str) -> bool:
        return name in self._operations

    def get(self, name: str) -> Operation:
        try:
            return self._operations[name]
        except KeyError:
            raise UnknownOperation(f"operation {name!r} is not registered")

    def run(self, name: str, params: bytes, ctx: OperationContext) -> bytes:
        """Invoke ``name``; anything but a CloudError becomes OperationError."""
        operation = self.get(name)
        try:
            result = operation(params, ctx)
        except CloudError:
            raise
        except Exception as e:
            logger.info(f"Operation {name} raised {type(e).__name__}: {e}", extra={"job_id": ctx.job_id})
            raise OperationError(f"{type(e).__name__}: {e}")
        return result if result is not None else b""

    def extended(self, extra: Mapping[str, Operation]) -> "OperationRegistry":
        return OperationRegistry({**self._operations, **extra})


def task_sequence(params: bytes, ctx: OperationContext) -> bytes:
    """{"steps": [{"operation": name, "params": {...}}, ...]} run in order; results concatenated."""
    (steps,) = _require(json_params(params), "steps")
    registry = get_operation_registry()
    results = []
    for step in steps:
        ctx.check_cancelled()
        name = step.get("operation", "")
        if name == "task_sequence":
            raise OperationError("task_sequence cannot nest")
        step_params = step.get("params", {})
        encoded = step_params.encode("utf-8") if isinstance(step_params, str) else json.dumps(step_params).encode("utf-8")
        results.append(registry.run(name, encoded, ctx))
    return b"".join(results)


BUILTIN_OPERATIONS: Dict[str, Operation] = {
    "run_process": run_process,
    "copy_file": copy_file,
    "rename_file": rename_file,
    "delete_file": delete_file,
    "task_sequence": task_sequence,
    "sleep": sleep,
    "fib": fib,
    "echo": echo,
    "fail": fail,
}

_registry: Optional[OperationRegistry] = None


def get_operation_registry() -> OperationRegistry:
    """Process-wide registry: built-ins plus the MapReduce phases."""
    global _registry
    if _registry is None:
        from app.models.mapreduce import MAPREDUCE_OPERATIONS

        _registry = OperationRegistry({**BUILTIN_OPERATIONS, **MAPREDUCE_OPERATIONS})
    return _registry

"""
Tests for the built-in operations and the operation registry.
"""
import json
import sys
import threading

import pytest

from app.errors import Aborted, OperationError, PathRejected, UnknownOperation
from app.execution.operations import OperationContext, get_operation_registry


@pytest.fixture
def ctx(tmp_path):
    return OperationContext(workspace=tmp_path, job_id="job-1")


def _run(name, params, ctx):
    return get_operation_registry().run(name, json.dumps(params).encode("utf-8"), ctx)


def test_registry_lists_builtins_and_mapreduce_phases():
    names = get_operation_registry().names()
    for expected in ("run_process", "copy_file", "rename_file", "delete_file", "task_sequence", "fib", "mr.map", "mr.reduce"):
        assert expected in names
    with pytest.raises(UnknownOperation):
        get_operation_registry().get("nope")


def test_fib_and_echo(ctx):
    assert _run("fib", {"n": 30}, ctx) == b"832040"
    assert get_operation_registry().run("echo", b"\x00raw", ctx) == b"\x00raw"
    with pytest.raises(OperationError):
        _run("fib", {"n": -1}, ctx)


def test_run_process_returns_stdout(ctx):
    out = _run("run_process", {"command": sys.executable, "args": ["-c", "print('hi')"]}, ctx)
    assert out.strip() == b"hi"


def test_run_process_runs_in_the_workspace(ctx, tmp_path):
    _run("run_process", {"command": sys.executable, "args": ["-c", "open('made.txt', 'w').write('x')"]}, ctx)
    assert (tmp_path / "made.txt").read_text() == "x"


def test_run_process_nonzero_exit_is_operation_error(ctx):
    with pytest.raises(OperationError) as info:
        _run("run_process", {"command": sys.executable, "args": ["-c", "import sys; sys.stderr.write('bad'); sys.exit(3)"]}, ctx)
    assert "status 3" in info.value.message
    assert "bad" in info.value.message


def test_run_process_missing_binary(ctx):
    with pytest.raises(OperationError):
        _run("run_process", {"command": "/definitely/not/here"}, ctx)


def test_file_operations(ctx, tmp_path):
    (tmp_path / "a.txt").write_text("alpha")
    _run("copy_file", {"src": "a.txt", "dst": "sub/b.txt"}, ctx)
    assert (tmp_path / "sub" / "b.txt").read_text() == "alpha"
    _run("rename_file", {"src": "sub/b.txt", "dst": "c.txt"}, ctx)
    assert not (tmp_path / "sub" / "b.txt").exists()
    _run("delete_file", {"path": "c.txt"}, ctx)
    _run("delete_file", {"path": "c.txt"}, ctx)
    assert not (tmp_path / "c.txt").exists()
    with pytest.raises(OperationError):
        _run("copy_file", {"src": "missing", "dst": "x"}, ctx)


def test_file_operations_stay_in_the_workspace(ctx):
    with pytest.raises(PathRejected):
        _run("copy_file", {"src": "../outside", "dst": "x"}, ctx)


def test_missing_parameters(ctx):
    with pytest.raises(OperationError) as info:
        _run("copy_file", {"src": "a"}, ctx)
    assert "dst" in info.value.message
    with pytest.raises(OperationError):
        get_operation_registry().run("fib", b"not json", ctx)


def test_task_sequence_runs_steps_in_order(ctx, tmp_path):
    (tmp_path / "a").write_text("1")
    params = {"steps": [
        {"operation": "copy_file", "params": {"src": "a", "dst": "b"}},
        {"operation": "fib", "params": {"n": 10}},
        {"operation": "delete_file", "params": {"path": "a"}},
    ]}
    assert _run("task_sequence", params, ctx) == b"55"
    assert (tmp_path / "b").exists() and not (tmp_path / "a").exists()


def test_task_sequence_stops_at_first_failure(ctx, tmp_path):
    params = {"steps": [
        {"operation": "fail", "params": {"message": "first"}},
        {"operation": "copy_file", "params": {"src": "x", "dst": "never"}},
    ]}
    with pytest.raises(OperationError, match="first"):
        _run("task_sequence", params, ctx)
    with pytest.raises(OperationError):
        _run("task_sequence", {"steps": [{"operation": "task_sequence", "params": {"steps": []}}]}, ctx)


def test_cancel_interrupts_sleep(ctx):
    threading.Timer(0.1, ctx.cancel).start()
    with pytest.raises(Aborted):
        _run("sleep", {"seconds": 30}, ctx)


def test_cancel_kills_a_running_process(ctx):
    threading.Timer(0.3, ctx.cancel).start()
    with pytest.raises(Aborted):
        _run("run_process", {"command": sys.executable, "args": ["-c", "import time; time.sleep(30)"]}, ctx)


def test_stray_exceptions_become_operation_errors(ctx):
    def broken(params, context):
        raise KeyError("k")

    registry = get_operation_registry().extended({"broken": broken})
    with pytest.raises(OperationError, match="KeyError"):
        registry.run("broken", b"", ctx)
    assert "broken" not in get_operation_registry()

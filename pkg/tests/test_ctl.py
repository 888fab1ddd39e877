"""
Tests for the ctl administration command: init, exit codes, statistics and
the commands that talk to a running cloud.
"""
import json

import pytest

from app.appmodel.schemas import load_client_config
from app.container.config import load_config
from app.ctl.cli import main
from app.ctl.exit_codes import ExitCode, exit_code_for
from app.ctl.stats import build_cloud_stats, format_stats
from app.directory.schemas import MembershipRecord, NodeState
from app.errors import (
    AuthFailed,
    EmptyDomain,
    OperationError,
    PeerUnreachable,
    UnknownNode,
)
from app.execution.schemas import ExecutorSlotState, SchedulerStats
from app.fabric.schemas import DynamicStats, StaticProfile
from app.reservation.schemas import ReservationStats
from app.transversal.security import hash_token, load_credential_file
from tests.conftest import alive_nodes, wait_until


def test_init_writes_a_master_and_workers(tmp_path, capsys):
    out = tmp_path / "cloud"
    assert main(["init", "--nodes", "3", "--dir", str(out), "--base-port", "7400", "--slots", "2"]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "client.yaml", "master.yaml", "start.sh", "worker-1.yaml", "worker-2.yaml",
    ]
    master = load_config(out / "master.yaml")
    assert master.listen_endpoint == "127.0.0.1:7400"
    assert [s.name for s in master.service_manifest] == [
        "directory", "scheduler", "reservation", "storage", "provisioner", "api", "executor",
    ]
    assert master.persistence_provider == "durable"
    worker = load_config(out / "worker-2.yaml")
    assert worker.listen_endpoint == "127.0.0.1:7402"
    assert worker.seed_peers == ["127.0.0.1:7400"]
    assert worker.service_manifest[0].options == {"slots": 2}
    assert worker.persistence_provider == "volatile"
    assert load_client_config(out / "client.yaml").master == "127.0.0.1:7400"
    assert (out / "start.sh").read_text().count("deskcloud-container --config") == 3
    assert "Wrote 3 container configs" in capsys.readouterr().out


def test_init_node_ids_are_stable_per_cloud_id(tmp_path):
    main(["init", "--nodes", "1", "--dir", str(tmp_path / "a")])
    main(["init", "--nodes", "1", "--dir", str(tmp_path / "b")])
    main(["init", "--nodes", "1", "--dir", str(tmp_path / "c"), "--cloud-id", "other"])
    ids = [load_config(tmp_path / d / "master.yaml").node_id for d in "abc"]
    assert ids[0] == ids[1] != ids[2]


def test_init_with_token_security(tmp_path):
    out = tmp_path / "secure"
    main(["init", "--nodes", "2", "--dir", str(out), "--security", "token", "--user", "root", "--token", "pw"])
    users = load_credential_file(str(out / "credentials.txt"))
    assert users == {"root": (hash_token("pw"), frozenset({"admin"}))}
    master = load_config(out / "master.yaml")
    assert master.security_provider == "token"
    assert master.credential_file == str((out / "credentials.txt").resolve())
    client = load_client_config(out / "client.yaml")
    assert (client.user_id, client.token) == ("root", "pw")


@pytest.mark.parametrize("error,code", [
    (PeerUnreachable("x"), ExitCode.CONNECTION_FAILED),
    (ConnectionRefusedError(), ExitCode.CONNECTION_FAILED),
    (AuthFailed(), ExitCode.DENIED),
    (UnknownNode("n"), ExitCode.NOT_FOUND),
    (EmptyDomain("d"), ExitCode.INVALID),
    (OperationError("boom"), ExitCode.ERROR),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_bad_arguments_exit_with_usage():
    with pytest.raises(SystemExit) as info:
        main(["reserve", "--master", "127.0.0.1:1"])
    assert info.value.code == ExitCode.USAGE


def test_stats_against_an_unreachable_master(capsys):
    assert main(["stats", "--master", "127.0.0.1:1", "--timeout", "0.5"]) == ExitCode.CONNECTION_FAILED
    assert capsys.readouterr().err.startswith("ctl: ")


# ---------------------------------------------------------------- statistics


def _record(node_id, state=NodeState.ALIVE, cpu=0.0):
    return MembershipRecord(
        node_id=node_id,
        endpoint=f"127.0.0.1:{7000 + int(node_id[-1])}",
        services=["executor"],
        static_profile=StaticProfile(cpu_count=4, total_memory_mb=8192),
        last_stats=DynamicStats(cpu_usage_percent=cpu, available_memory_mb=4096),
        state=state,
    )


def test_build_cloud_stats_joins_the_sources():
    scheduler = SchedulerStats(
        jobs_by_state={"running": 2, "queued": 5},
        nodes=[ExecutorSlotState(node_id="node-1", slots_total=4, slots_busy=2)],
        completions_last_5min=30,
    )
    stats = build_cloud_stats(
        [_record("node-2", NodeState.SUSPECT), _record("node-1", cpu=42.0)],
        scheduler,
        ReservationStats(active=1),
        sampled_at=123,
    )
    assert [n.node_id for n in stats.nodes] == ["node-1", "node-2"]
    assert (stats.nodes_alive, stats.slots_busy, stats.slots_total) == (1, 2, 4)
    assert stats.throughput_per_min == 6.0
    assert stats.reservations_active == 1

    text = format_stats(stats)
    assert "nodes alive: 1/2   slots: 2/4" in text
    assert "jobs: queued=5 running=2" in text
    assert "42.0" in text


def test_stats_without_scheduler_or_reservations():
    stats = build_cloud_stats([_record("node-1")], None, None, sampled_at=0)
    assert stats.jobs_by_state == {}
    assert "jobs: none" in format_stats(stats)


# ---------------------------------------------------------------- live


def ctl(*argv: str) -> int:
    """Run ctl with logging silenced so stdout stays parseable."""
    return main(["--log-level", "CRITICAL", *argv])


def test_stats_and_submit_against_a_running_cloud(running_cloud, capsys):
    master = running_cloud.master.endpoint
    assert ctl("stats", "--master", master, "--json") == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["nodes_alive"] == 3
    assert stats["slots_total"] == 6

    code = ctl(
        "submit", "--master", master, "--operation", "fib", "--params", '{"n": 7}',
        "--count", "3", "--wait", "--wait-timeout", "30",
    )
    assert code == 0
    assert capsys.readouterr().out.count(" completed 13") == 3

    code = ctl("submit", "--master", master, "--operation", "fail", "--max-attempts", "1", "--wait")
    assert code == ExitCode.JOBS_FAILED


def test_reserve_against_a_running_cloud(running_cloud, capsys):
    window = ["--master", running_cloud.master.endpoint, "--start", "+600", "--duration", "60"]
    assert ctl("reserve", "--nodes", "3", *window) == 0
    confirmed = json.loads(capsys.readouterr().out)
    assert confirmed["outcome"] == "confirmed"

    assert ctl("reserve", "--nodes", "1", *window) == ExitCode.NOT_GRANTED
    assert json.loads(capsys.readouterr().out)["outcome"] == "counter_offer"

    assert ctl("reserve", "--nodes", "1", "--accept", *window) == 0
    accepted = json.loads(capsys.readouterr().out)
    assert accepted["reservation"]["window"]["start"] == confirmed["reservation"]["window"]["end"]


def test_node_stop_drains_a_worker(running_cloud):
    master = running_cloud.master
    worker = running_cloud.containers[-1]
    assert ctl("node", "stop", worker.node_id[:8], "--master", master.endpoint) == 0
    assert worker.wait_stopped(10)
    assert wait_until(lambda: worker.node_id not in alive_nodes(master))
    assert ctl("node", "stop", "nope", "--master", master.endpoint) == ExitCode.NOT_FOUND

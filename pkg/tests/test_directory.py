"""
Tests for the membership catalogue state machine and for live joining,
failure detection and leaving through the directory service.
"""
import pytest

from app.directory.catalogue import MembershipCatalogue
from app.directory.schemas import Heartbeat, MembershipRecord, NodeState
from app.errors import LicenseRejected, NodeNotRegistered, StaleHeartbeat
from app.fabric.schemas import StaticProfile
from tests.conftest import alive_nodes, wait_until

HB = 1000


def _record(node_id: str, services=("executor",), sequence: int = 1) -> MembershipRecord:
    return MembershipRecord(
        node_id=node_id,
        endpoint=f"127.0.0.1:{7000 + len(node_id)}",
        services=list(services),
        static_profile=StaticProfile(cpu_count=4, total_memory_mb=8192),
        last_sequence=sequence,
    )


def _beat(node_id: str, sequence: int, services=("executor",)) -> Heartbeat:
    return Heartbeat(node_id=node_id, services=list(services), sequence=sequence)


def test_register_then_query_by_service():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a", ["executor"]), now=0)
    catalogue.register(_record("b", ["storage"]), now=0)
    assert [r.node_id for r in catalogue.query()] == ["a", "b"]
    assert [r.node_id for r in catalogue.query("storage")] == ["b"]
    assert catalogue.query("scheduler") == []


def test_liveness_transitions_follow_the_heartbeat_factors():
    """alive -> suspect after 3 intervals, -> dead after 10, purged after 60."""
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a"), now=0)

    assert catalogue.sweep(3 * HB) == []
    transitions = catalogue.sweep(3 * HB + 1)
    assert [(t.from_state, t.to_state) for t in transitions] == [(NodeState.ALIVE, NodeState.SUSPECT)]
    assert [r.node_id for r in catalogue.query()] == ["a"]

    transitions = catalogue.sweep(10 * HB + 1)
    assert [(t.from_state, t.to_state) for t in transitions] == [(NodeState.SUSPECT, NodeState.DEAD)]
    assert catalogue.query() == []
    assert "a" in catalogue.records

    transitions = catalogue.sweep(60 * HB + 1)
    assert transitions[0].to_state is None
    assert "a" not in catalogue.records


def test_heartbeat_revives_a_suspect_node():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a", sequence=1), now=0)
    catalogue.sweep(4 * HB)
    assert catalogue.records["a"].state == NodeState.SUSPECT
    catalogue.heartbeat(_beat("a", 2), now=4 * HB)
    assert catalogue.records["a"].state == NodeState.ALIVE


def test_a_single_sweep_can_pass_straight_to_dead():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a"), now=0)
    transitions = catalogue.sweep(11 * HB)
    assert [t.to_state for t in transitions] == [NodeState.SUSPECT, NodeState.DEAD]


def test_stale_and_unregistered_heartbeats_are_refused():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a", sequence=5), now=0)
    with pytest.raises(StaleHeartbeat):
        catalogue.heartbeat(_beat("a", 5), now=10)
    with pytest.raises(NodeNotRegistered):
        catalogue.heartbeat(_beat("ghost", 1), now=10)


def test_dead_node_must_register_again():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a"), now=0)
    catalogue.sweep(11 * HB)
    with pytest.raises(NodeNotRegistered):
        catalogue.heartbeat(_beat("a", 9), now=11 * HB)
    catalogue.register(_record("a"), now=12 * HB)
    assert catalogue.records["a"].state == NodeState.ALIVE


def test_heartbeat_replaces_the_service_list():
    catalogue = MembershipCatalogue(HB)
    catalogue.register(_record("a", ["executor"]), now=0)
    catalogue.heartbeat(_beat("a", 2, ["executor", "storage"]), now=10)
    assert catalogue.query("storage")[0].node_id == "a"


def test_license_caps_live_nodes_but_not_rejoins():
    catalogue = MembershipCatalogue(HB, license_max_nodes=2)
    catalogue.register(_record("a"), now=0)
    catalogue.register(_record("b"), now=0)
    with pytest.raises(LicenseRejected):
        catalogue.register(_record("c"), now=0)
    catalogue.register(_record("a"), now=5)
    catalogue.sweep(11 * HB)
    catalogue.register(_record("c"), now=11 * HB)
    assert catalogue.counted() == 1


def test_license_restricts_services():
    catalogue = MembershipCatalogue(HB, license_allowed_services=["executor"])
    with pytest.raises(LicenseRejected):
        catalogue.register(_record("a", ["executor", "storage"]), now=0)


def test_restore_gives_survivors_a_fresh_grace_period():
    catalogue = MembershipCatalogue(HB)
    dead = _record("d").model_copy(update={"state": NodeState.DEAD})
    catalogue.restore([_record("a"), dead], now=50_000)
    assert list(catalogue.records) == ["a"]
    assert catalogue.records["a"].last_heartbeat_at == 50_000
    assert catalogue.sweep(50_000 + 3 * HB) == []


# ---------------------------------------------------------------- live cloud


def test_workers_join_through_the_seed(running_cloud):
    master = running_cloud.master
    members = alive_nodes(master)
    assert sorted(members) == sorted(c.node_id for c in running_cloud.containers)
    worker = running_cloud.containers[1]
    assert wait_until(lambda: worker.directory_client.registered)
    assert worker.directory_client.catalogue_node == master.node_id


def test_killed_worker_is_declared_dead(running_cloud):
    """Kill without leave: the sweep moves the node out of the live view."""
    worker = running_cloud.containers[1]
    worker.kill()
    # dead after 10 intervals of 200 ms
    assert wait_until(lambda: worker.node_id not in alive_nodes(running_cloud.master), timeout=8)


def test_stopped_worker_leaves_immediately(running_cloud):
    worker = running_cloud.containers[2]
    worker.stop(drain=True)
    assert wait_until(lambda: worker.node_id not in alive_nodes(running_cloud.master), timeout=2)


def test_installed_service_is_advertised(running_cloud):
    worker = running_cloud.containers[1]
    worker.install_service("storage", {"root": str(running_cloud.root / "w1-storage")})
    master = running_cloud.master

    def advertised() -> bool:
        return worker.node_id in [r.node_id for r in master.directory_client.query("storage")]

    assert wait_until(advertised, timeout=5)


def test_license_rejected_node_stays_out(local_cloud):
    local_cloud.start_master(license_max_nodes=1)
    local_cloud.wait_members(1)
    worker = local_cloud.start_worker("worker-1")
    assert wait_until(lambda: worker.directory_client.license_rejected, timeout=5)
    assert worker.node_id not in alive_nodes(local_cloud.master)

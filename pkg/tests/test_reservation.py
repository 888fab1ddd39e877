"""
Tests for advance reservation: the earliest-feasible search (checked against
a brute-force oracle), negotiation, reservation lifecycle, admission and the
live reservation service.
"""
import random

import pytest

from app.errors import IllegalTransition, Unauthorized, UnknownReservation
from app.reservation.allocation import AllocationManager, admissible
from app.reservation.book import AllocationMap, ReservationBook, earliest_feasible
from app.reservation.schemas import (
    NodeWindow,
    Outcome,
    ReservationRequest,
    ReservationState,
    TimeWindow,
    WindowSync,
)

NODES = ["n1", "n2", "n3"]


def _request(node_count=1, earliest=100, latest=200, duration_s=10, round=0) -> ReservationRequest:
    return ReservationRequest(
        requester="alice", node_count=node_count, earliest=earliest, latest=latest,
        duration_s=duration_s, round=round,
    )


def _brute_force(allocations: AllocationMap, nodes, node_count, duration_s, earliest, latest):
    """Earliest integer start with enough free nodes, scanning every second."""
    for start in range(earliest, latest - duration_s + 1):
        window = TimeWindow(start=start, end=start + duration_s)
        free = [n for n in sorted(nodes) if allocations.is_free(n, window)]
        if len(free) >= node_count:
            return window, free[:node_count]
    return None


def test_window_is_half_open():
    a = TimeWindow(start=0, end=10)
    assert not a.overlaps(TimeWindow(start=10, end=20))
    assert a.overlaps(TimeWindow(start=9, end=20))
    assert a.contains(0) and not a.contains(10)
    with pytest.raises(ValueError):
        TimeWindow(start=5, end=5)


def test_request_must_fit_its_interval():
    with pytest.raises(ValueError):
        _request(earliest=100, latest=105, duration_s=10)
    with pytest.raises(ValueError):
        ReservationRequest(earliest=0, latest=10, duration_s=5, required_services=["storage"])


@pytest.mark.parametrize("seed", range(25))
def test_earliest_feasible_matches_brute_force(seed):
    rng = random.Random(seed)
    allocations = AllocationMap()
    for i in range(rng.randint(0, 8)):
        node = rng.choice(NODES)
        start = rng.randint(0, 90)
        window = TimeWindow(start=start, end=start + rng.randint(1, 25))
        if allocations.is_free(node, window):
            allocations.add(node, window, f"r{i}")
    node_count = rng.randint(1, 3)
    duration = rng.randint(1, 20)
    earliest = rng.randint(0, 40)
    latest = earliest + duration + rng.randint(0, 80)

    assert allocations.is_consistent()
    assert earliest_feasible(allocations, NODES, node_count, duration, earliest, latest) == _brute_force(
        allocations, NODES, node_count, duration, earliest, latest
    )


def test_confirmed_reservation_occupies_the_earliest_slot():
    book = ReservationBook()
    first = book.request(_request(node_count=2), NODES, now=0)
    assert first.outcome == Outcome.CONFIRMED
    assert first.reservation.node_ids == ["n1", "n2"]
    assert first.reservation.window == TimeWindow(start=100, end=110)

    second = book.request(_request(node_count=2), NODES, now=0)
    assert second.reservation.window == TimeWindow(start=110, end=120)
    assert book.allocations.is_consistent()


def test_request_never_starts_in_the_past():
    book = ReservationBook()
    decision = book.request(_request(earliest=100, latest=200), NODES, now=150)
    assert decision.reservation.window.start == 150


def test_counter_offer_then_accept_within_rounds():
    book = ReservationBook(horizon_s=1000, max_rounds=3)
    book.request(_request(node_count=3, earliest=100, latest=200, duration_s=100), NODES, now=0)
    decision = book.request(_request(node_count=1, earliest=100, latest=150, duration_s=20), NODES, now=0)
    assert decision.outcome == Outcome.COUNTER_OFFER
    offer = decision.counter_offer
    assert offer.proposed_window == TimeWindow(start=200, end=220)

    accepted = book.accept_counter(offer, NODES, now=0)
    assert accepted.outcome == Outcome.CONFIRMED
    assert accepted.reservation.window == offer.proposed_window


def test_rejected_when_not_even_the_horizon_helps():
    book = ReservationBook(horizon_s=10)
    decision = book.request(_request(node_count=4), NODES, now=0)
    assert decision.outcome == Outcome.REJECTED
    assert decision.reason


def test_rounds_exhausted_is_rejection():
    book = ReservationBook(horizon_s=1000, max_rounds=1)
    book.request(_request(node_count=3, earliest=100, latest=200, duration_s=100), NODES, now=0)
    decision = book.request(_request(earliest=100, latest=150, duration_s=20, round=1), NODES, now=0)
    assert decision.outcome == Outcome.REJECTED


def test_lifecycle_confirmed_active_expired():
    book = ReservationBook()
    reservation = book.request(_request(), NODES, now=0).reservation
    rid = reservation.reservation_id
    assert book.tick(99) == []
    assert [t.to_state for t in book.tick(100)] == [ReservationState.ACTIVE]
    with pytest.raises(IllegalTransition):
        book.cancel(rid)
    assert [t.to_state for t in book.tick(110)] == [ReservationState.EXPIRED]
    assert book.allocations.entries("n1") == []
    with pytest.raises(IllegalTransition):
        book.bind(rid, "app")


def test_cancel_frees_the_window():
    book = ReservationBook()
    rid = book.request(_request(node_count=3), NODES, now=0).reservation.reservation_id
    assert book.cancel(rid).state == ReservationState.CANCELLED
    again = book.request(_request(node_count=3), NODES, now=0)
    assert again.reservation.window.start == 100
    with pytest.raises(UnknownReservation):
        book.get("missing")


def test_finished_reservations_are_pruned_after_the_horizon():
    book = ReservationBook(horizon_s=50)
    expired = book.request(_request(), NODES, now=0).reservation.reservation_id
    cancelled = book.request(_request(node_count=2), NODES, now=0).reservation.reservation_id
    live = book.request(_request(earliest=300, latest=400), NODES, now=0).reservation.reservation_id
    book.cancel(cancelled)
    book.tick(100)
    book.tick(110)
    assert book.get(expired).state == ReservationState.EXPIRED
    assert book.prune(159) == 0
    assert book.prune(160) == 2
    assert list(book.reservations) == [live]
    with pytest.raises(UnknownReservation):
        book.get(expired)


def test_bound_app_appears_in_node_windows():
    book = ReservationBook()
    rid = book.request(_request(), NODES, now=0).reservation.reservation_id
    book.bind(rid, "app-1")
    assert book.node_windows()["n1"][0].bound_app == "app-1"


# ---------------------------------------------------------------- admission


def _windows(bound_app=None):
    return [NodeWindow(window=TimeWindow(start=100, end=200), reservation_id="r", bound_app=bound_app)]


def test_only_the_bound_app_runs_inside_a_window():
    assert admissible(_windows("owner"), "owner", True, now=150).admit
    refused = admissible(_windows("owner"), "other", True, now=150)
    assert (refused.admit, refused.reason) == (False, "reserved")
    assert not admissible(_windows(None), "anyone", True, now=150).admit


def test_outside_windows_admission_depends_on_authentication():
    assert admissible(_windows(), "app", True, now=50).admit
    assert admissible(_windows(), "app", False, now=50).reason == "unauthenticated"


def test_lead_time_holds_back_non_owners():
    assert admissible(_windows("owner"), "other", True, now=80, lead_time_s=30).reason == "upcoming"
    assert admissible(_windows("owner"), "owner", True, now=80, lead_time_s=30).admit
    assert admissible(_windows("owner"), "other", True, now=60, lead_time_s=30).admit


def test_allocation_manager_ignores_older_pushes():
    manager = AllocationManager()
    assert manager.sync(WindowSync(version=2, windows={"n1": _windows("a")}))
    assert not manager.sync(WindowSync(version=1, windows={}))
    assert manager.reserved_nodes(150) == {"n1": "a"}


# ---------------------------------------------------------------- live service


def test_negotiated_reservation_over_the_wire(cloud_client):
    from app.clock import now_s
    from app.reservation.client import ReservationClient

    client = ReservationClient(cloud_client)
    now = now_s()
    request = ReservationRequest(node_count=3, earliest=now + 600, latest=now + 700, duration_s=100)
    confirmed = client.negotiate(request)
    assert confirmed.outcome == Outcome.CONFIRMED
    assert len(confirmed.reservation.node_ids) == 3

    second = client.negotiate(ReservationRequest(node_count=1, earliest=now + 600, latest=now + 650, duration_s=50))
    assert second.outcome == Outcome.CONFIRMED
    assert second.reservation.window.start >= confirmed.reservation.window.end

    rid = confirmed.reservation.reservation_id
    assert client.bind(rid, "app-x").bound_app == "app-x"
    assert client.cancel(rid).state == ReservationState.CANCELLED
    assert client.get(rid).state == ReservationState.CANCELLED


def test_only_the_owner_or_an_admin_changes_a_reservation(local_cloud, tmp_path):
    from app.appmodel.client import CloudClient
    from app.clock import now_s
    from app.reservation.client import ReservationClient
    from app.transversal.security import hash_token

    users = tmp_path / "users.txt"
    users.write_text(
        f"alice:{hash_token('a')}\nbob:{hash_token('b')}\nroot:{hash_token('r')}:admin\n",
        encoding="utf-8",
    )
    master = local_cloud.start_master(security_provider="token", credential_file=str(users))
    local_cloud.wait_members(1)
    clients = {
        name: CloudClient.connect(master.endpoint, user_id=name, token=name[0], timeout_s=5.0)
        for name in ("alice", "bob", "root")
    }
    try:
        alice, bob, root = (ReservationClient(clients[n]) for n in ("alice", "bob", "root"))
        now = now_s()
        first = alice.negotiate(ReservationRequest(node_count=1, earliest=now + 600, latest=now + 700, duration_s=10))
        assert first.reservation.owner == "alice"
        rid = first.reservation.reservation_id

        with pytest.raises(Unauthorized):
            bob.bind(rid, "bobs-app")
        with pytest.raises(Unauthorized):
            bob.cancel(rid)
        assert alice.bind(rid, "alices-app").bound_app == "alices-app"

        second = alice.negotiate(ReservationRequest(node_count=1, earliest=now + 800, latest=now + 900, duration_s=10))
        assert root.cancel(second.reservation.reservation_id).state == ReservationState.CANCELLED
        assert alice.cancel(rid).state == ReservationState.CANCELLED
    finally:
        for client in clients.values():
            client.close()

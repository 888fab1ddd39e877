"""
Global allocation map and the alternate-offers negotiation.

All arithmetic is in whole seconds. Windows are half-open [start, end).
The earliest feasible start for a set of nodes is always either the requested
earliest time or the end of some booked window, so only those candidates are
examined.
"""
import bisect
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from uuid import uuid4

from app.errors import IllegalTransition, UnknownReservation
from app.reservation.schemas import (
    AllocationEntry,
    CounterOffer,
    NodeWindow,
    Outcome,
    Reservation,
    ReservationDecision,
    ReservationRequest,
    ReservationState,
    ReservationTransition,
    TimeWindow,
)

logger = logging.getLogger(__name__)

DEFAULT_HORIZON_S = 86400
DEFAULT_MAX_ROUNDS = 3


class AllocationMap:
    """Per-node booked windows, sorted by start and never overlapping."""

    def __init__(self):
        self.windows: Dict[str, List[AllocationEntry]] = {}

    def entries(self, node_id: str) -> List[AllocationEntry]:
        return self.windows.get(node_id, [])

    def is_free(self, node_id: str, window: TimeWindow) -> bool:
        return not any(entry.window.overlaps(window) for entry in self.entries(node_id))

    def add(self, node_id: str, window: TimeWindow, reservation_id: str) -> None:
        if not self.is_free(node_id, window):
            raise ValueError(f"window {window.start}-{window.end} overlaps a booking on {node_id}")
        entries = self.windows.setdefault(node_id, [])
        starts = [e.window.start for e in entries]
        entries.insert(bisect.bisect(starts, window.start), AllocationEntry(window=window, reservation_id=reservation_id))

    def remove(self, reservation_id: str) -> None:
        for node_id in list(self.windows):
            kept = [e for e in self.windows[node_id] if e.reservation_id != reservation_id]
            if kept:
                self.windows[node_id] = kept
            else:
                del self.windows[node_id]

    def is_consistent(self) -> bool:
        for entries in self.windows.values():
            for a, b in zip(entries, entries[1:]):
                if a.window.start > b.window.start or a.window.overlaps(b.window):
                    return False
        return True


def earliest_feasible(
    allocations: AllocationMap,
    candidates: Sequence[str],
    node_count: int,
    duration_s: int,
    earliest: int,
    latest: int,
) -> Optional[Tuple[TimeWindow, List[str]]]:
    """
    Earliest window of ``duration_s`` inside [earliest, latest] free on at
    least ``node_count`` candidates; ties broken by lowest node id.
    """
    nodes = sorted(set(candidates))
    if len(nodes) < node_count:
        return None
    starts = {earliest}
    for node_id in nodes:
        for entry in allocations.entries(node_id):
            if entry.window.end > earliest:
                starts.add(entry.window.end)
    for start in sorted(starts):
        if start + duration_s > latest:
            break
        window = TimeWindow(start=start, end=start + duration_s)
        free = [n for n in nodes if allocations.is_free(n, window)]
        if len(free) >= node_count:
            return window, free[:node_count]
    return None


class ReservationBook:
    """Reservations plus the allocation map, mutated only by the reservation service."""

    def __init__(self, horizon_s: int = DEFAULT_HORIZON_S, max_rounds: int = DEFAULT_MAX_ROUNDS):
        self.horizon_s = horizon_s
        self.max_rounds = max_rounds
        self.reservations: Dict[str, Reservation] = {}
        self.allocations = AllocationMap()
        self.version = 0

    def request(self, req: ReservationRequest, candidates: Sequence[str], now: int) -> ReservationDecision:
        earliest = max(req.earliest, now)
        found = earliest_feasible(self.allocations, candidates, req.node_count, req.duration_s, earliest, req.latest)
        if found is not None:
            window, nodes = found
            reservation = Reservation(
                reservation_id=str(uuid4()),
                node_ids=nodes,
                window=window,
                owner=req.requester,
            )
            for node_id in nodes:
                self.allocations.add(node_id, window, reservation.reservation_id)
            self.reservations[reservation.reservation_id] = reservation
            self.version += 1
            logger.info(
                f"Confirmed {reservation.reservation_id} on {nodes} for [{window.start}, {window.end})",
                extra={"decision": "confirmed"},
            )
            return ReservationDecision(outcome=Outcome.CONFIRMED, reservation=reservation)

        if req.round >= self.max_rounds:
            return self._rejected("negotiation rounds exhausted")
        found = earliest_feasible(
            self.allocations, candidates, req.node_count, req.duration_s, earliest, req.latest + self.horizon_s
        )
        if found is None:
            return self._rejected("no feasible window within the negotiation horizon")
        window, _ = found
        offer = CounterOffer(
            original_request=req,
            proposed_window=window,
            proposed_node_count=req.node_count,
            round=req.round,
        )
        logger.info(f"Counter-offer [{window.start}, {window.end}) at round {req.round}", extra={"decision": "counter"})
        return ReservationDecision(outcome=Outcome.COUNTER_OFFER, counter_offer=offer)

    def accept_counter(self, offer: CounterOffer, candidates: Sequence[str], now: int) -> ReservationDecision:
        if offer.round >= self.max_rounds:
            return self._rejected("negotiation rounds exhausted")
        original = offer.original_request
        req = ReservationRequest(
            requester=original.requester,
            node_count=offer.proposed_node_count,
            earliest=offer.proposed_window.start,
            latest=offer.proposed_window.end,
            duration_s=offer.proposed_window.duration_s,
            required_services=original.required_services,
            round=offer.round + 1,
        )
        return self.request(req, candidates, now)

    def _rejected(self, reason: str) -> ReservationDecision:
        logger.info(f"Rejected: {reason}", extra={"decision": "rejected"})
        return ReservationDecision(outcome=Outcome.REJECTED, reason=reason)

    def get(self, reservation_id: str) -> Reservation:
        reservation = self.reservations.get(reservation_id)
        if reservation is None:
            raise UnknownReservation(f"no reservation {reservation_id}")
        return reservation

    def cancel(self, reservation_id: str) -> Reservation:
        reservation = self.get(reservation_id)
        if reservation.state != ReservationState.CONFIRMED:
            raise IllegalTransition(f"cannot cancel a {reservation.state.value} reservation")
        reservation = reservation.model_copy(update={"state": ReservationState.CANCELLED})
        self.reservations[reservation_id] = reservation
        self.allocations.remove(reservation_id)
        self.version += 1
        return reservation

    def bind(self, reservation_id: str, app_id: str) -> Reservation:
        reservation = self.get(reservation_id)
        if reservation.state not in (ReservationState.CONFIRMED, ReservationState.ACTIVE):
            raise IllegalTransition(f"cannot bind a {reservation.state.value} reservation")
        reservation = reservation.model_copy(update={"bound_app": app_id})
        self.reservations[reservation_id] = reservation
        self.version += 1
        return reservation

    def tick(self, now: int) -> List[ReservationTransition]:
        transitions: List[ReservationTransition] = []
        for rid in sorted(self.reservations):
            reservation = self.reservations[rid]
            state = reservation.state
            if state == ReservationState.CONFIRMED and now >= reservation.window.start:
                transitions.append(ReservationTransition(reservation_id=rid, from_state=state, to_state=ReservationState.ACTIVE))
                state = ReservationState.ACTIVE
            if state == ReservationState.ACTIVE and now >= reservation.window.end:
                transitions.append(ReservationTransition(reservation_id=rid, from_state=state, to_state=ReservationState.EXPIRED))
                state = ReservationState.EXPIRED
                self.allocations.remove(rid)
            if state != reservation.state:
                self.reservations[rid] = reservation.model_copy(update={"state": state})
        if transitions:
            self.version += 1
        return transitions

    def prune(self, now: int) -> int:
        """Forget cancelled and expired reservations once their window is a horizon in the past."""
        finished = (ReservationState.CANCELLED, ReservationState.EXPIRED)
        stale = [
            rid for rid, r in self.reservations.items()
            if r.state in finished and now >= r.window.end + self.horizon_s
        ]
        for rid in stale:
            del self.reservations[rid]
        if stale:
            logger.debug(f"Pruned {len(stale)} finished reservations")
        return len(stale)

    def node_windows(self) -> Dict[str, List[NodeWindow]]:
        """Per-node view pushed to allocation managers and the scheduler."""
        view: Dict[str, List[NodeWindow]] = {}
        for node_id, entries in self.allocations.windows.items():
            view[node_id] = [
                NodeWindow(
                    window=e.window,
                    reservation_id=e.reservation_id,
                    bound_app=self.reservations[e.reservation_id].bound_app,
                )
                for e in entries
            ]
        return view

    def restore(self, reservations: Iterable[Reservation], allocations: Dict[str, List[AllocationEntry]]) -> None:
        self.reservations = {r.reservation_id: r for r in reservations}
        self.allocations = AllocationMap()
        self.allocations.windows = {node: list(entries) for node, entries in allocations.items() if entries}
        self.version += 1

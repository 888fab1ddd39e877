"""
Allocation Manager: a node's read-only copy of its reserved windows and the
admission rule applied before a job may run there.
"""
import threading
from typing import Dict, List, Optional, Sequence

from app.reservation.schemas import Admission, NodeWindow, WindowSync

ADMIT = Admission(admit=True)


def admissible(
    windows: Sequence[NodeWindow],
    app_id: str,
    authenticated: bool,
    now: int,
    lead_time_s: int = 0,
) -> Admission:
    """
    Inside a window only jobs of the bound application run. Outside any window
    a job runs if it passed the security check. With ``lead_time_s`` set,
    non-owner jobs are also held back from windows starting that soon.
    """
    for nw in windows:
        if nw.window.contains(now):
            if nw.bound_app is not None and nw.bound_app == app_id:
                return ADMIT
            return Admission(admit=False, reason="reserved")
    if lead_time_s:
        for nw in windows:
            if now < nw.window.start <= now + lead_time_s and nw.bound_app != app_id:
                return Admission(admit=False, reason="upcoming")
    if not authenticated:
        return Admission(admit=False, reason="unauthenticated")
    return ADMIT


def owns_active_window(windows: Sequence[NodeWindow], app_id: str, now: int) -> bool:
    return any(nw.window.contains(now) and nw.bound_app == app_id for nw in windows)


class AllocationManager:
    """Thread-safe holder of the latest window push for one or more nodes."""

    def __init__(self):
        self._lock = threading.Lock()
        self.version = -1
        self._windows: Dict[str, List[NodeWindow]] = {}

    def sync(self, update: WindowSync) -> bool:
        with self._lock:
            if update.version < self.version:
                return False
            self.version = update.version
            self._windows = {node: list(ws) for node, ws in update.windows.items()}
            return True

    def windows_for(self, node_id: str) -> List[NodeWindow]:
        with self._lock:
            return list(self._windows.get(node_id, []))

    def admissible(self, node_id: str, app_id: str, authenticated: bool, now: int, lead_time_s: int = 0) -> Admission:
        return admissible(self.windows_for(node_id), app_id, authenticated, now, lead_time_s)

    def reserved_nodes(self, now: int) -> Dict[str, Optional[str]]:
        """node_id -> bound app of the window active at ``now``."""
        with self._lock:
            active: Dict[str, Optional[str]] = {}
            for node_id, windows in self._windows.items():
                for nw in windows:
                    if nw.window.contains(now):
                        active[node_id] = nw.bound_app
            return active

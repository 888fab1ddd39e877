"""
Accounting and pricing over job usage.

One UsageRecord per execution attempt that reached running. Charged time is
measured wall time rounded up to the millisecond; the tariff granularity is
applied only when pricing.
"""
import math
from collections import defaultdict
from typing import Dict, Iterable, Optional

from app.container.config import Tariff
from app.transversal.schemas import UsageRecord


def charged_seconds(started_at_ms: int, ended_at_ms: int) -> float:
    return max(0, ended_at_ms - started_at_ms) / 1000.0


def account(
    user_id: str,
    app_id: str,
    job_id: str,
    node_id: str,
    attempt: int,
    started_at_ms: Optional[int],
    ended_at_ms: Optional[int],
) -> Optional[UsageRecord]:
    """Usage for one attempt, or None if it never reached running."""
    if started_at_ms is None or ended_at_ms is None:
        return None
    return UsageRecord(
        user_id=user_id,
        app_id=app_id,
        job_id=job_id,
        node_id=node_id,
        attempt=attempt,
        started_at=started_at_ms,
        ended_at=max(ended_at_ms, started_at_ms),
        charged_seconds=charged_seconds(started_at_ms, ended_at_ms),
    )


def price(records: Iterable[UsageRecord], tariff: Tariff) -> float:
    """Sum of ceil(charged / granularity) x rate over the records."""
    units = sum(math.ceil(r.charged_seconds / tariff.granularity_s) for r in records)
    return units * tariff.rate


def charged_by_node(records: Iterable[UsageRecord]) -> Dict[str, float]:
    totals: Dict[str, float] = defaultdict(float)
    for r in records:
        totals[r.node_id] += r.charged_seconds
    return dict(totals)

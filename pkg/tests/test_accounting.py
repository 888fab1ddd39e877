"""
Tests for usage accounting and pricing.
"""
import pytest

from app.container.config import Tariff
from app.transversal.accounting import account, charged_by_node, charged_seconds, price


def _record(job_id, node_id, start, end, attempt=1):
    return account("alice", "app", job_id, node_id, attempt, start, end)


def test_charged_time_is_millisecond_wall_time():
    assert charged_seconds(1000, 3500) == 2.5
    assert charged_seconds(5000, 4000) == 0.0


def test_attempts_that_never_ran_are_not_accounted():
    assert _record("j", "n", None, 10) is None
    assert _record("j", "n", 10, None) is None


def test_record_fields():
    record = _record("j1", "n1", 1000, 2001, attempt=2)
    assert (record.user_id, record.app_id, record.attempt) == ("alice", "app", 2)
    assert record.charged_seconds == 1.001


@pytest.mark.parametrize("granularity,rate,expected", [
    (3600, 1.0, 3.0),
    (1, 0.5, 0.5 * (2 + 1 + 3600)),
    (60, 2.0, 2.0 * (1 + 1 + 60)),
])
def test_price_rounds_each_record_up_to_the_granularity(granularity, rate, expected):
    records = [_record("a", "n1", 0, 1500), _record("b", "n1", 0, 1000), _record("c", "n2", 0, 3_600_000)]
    assert price(records, Tariff(granularity_s=granularity, rate=rate)) == pytest.approx(expected)


def test_zero_time_costs_nothing():
    assert price([_record("a", "n1", 10, 10)], Tariff()) == 0.0


def test_charged_by_node():
    records = [_record("a", "n1", 0, 1000), _record("b", "n1", 0, 500), _record("c", "n2", 0, 250)]
    assert charged_by_node(records) == {"n1": 1.5, "n2": 0.25}

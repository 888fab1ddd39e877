"""Wall-clock helpers. All timestamps are UTC milliseconds since the epoch."""
import time


def now_ms() -> int:
    return int(time.time() * 1000)


def now_s() -> int:
    return int(time.time())

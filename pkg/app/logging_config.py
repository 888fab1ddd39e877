"""
Centralized logging configuration for deskcloud.

Set DESKCLOUD_LOG_FORMAT=json to get structured JSON output suitable for log
aggregation. The default format is human-readable. Every record carries the
node_id of the container that emitted it, so logs of an in-process cloud stay
attributable.
"""
import logging
import sys
from typing import Optional

from app.config import settings


class NodeContextFilter(logging.Filter):
    """Stamps records with the owning container's node id."""

    def __init__(self, node_id: str = "-"):
        super().__init__()
        self.node_id = node_id

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "node_id"):
            record.node_id = self.node_id
        return True


def configure_logging(log_level: Optional[str] = None, node_id: str = "-") -> None:
    """
    Configure root logger with either JSON or human-readable format.

    Call this once at process startup before any other logging occurs.
    """
    level = getattr(logging, (log_level or settings.LOG_LEVEL).upper(), logging.INFO)
    handler = logging.StreamHandler(sys.stdout)
    handler.addFilter(NodeContextFilter(node_id))

    handler.setFormatter(
        logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - [%(node_id)s] %(message)s")
    )

    if settings.LOG_FORMAT.lower() == "json":
        try:
            from pythonjsonlogger.json import JsonFormatter
            handler.setFormatter(
                JsonFormatter(
                    fmt="%(asctime)s %(name)s %(levelname)s %(node_id)s %(message)s",
                    datefmt="%Y-%m-%dT%H:%M:%S",
                )
            )
        except ImportError:
            pass  # keep the text formatter if the library is missing

    logging.basicConfig(level=level, handlers=[handler], force=True)

"""
Container binary: ``deskcloud-container --config node.yaml``.

Loads the configuration, starts the container and blocks until it stops
(``sys.stop``, TTL expiry, SIGTERM or Ctrl-C).
"""
import argparse
import logging
import signal
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.container.config import load_config
from app.container.container import Container
from app.errors import CloudError
from app.logging_config import configure_logging

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Run a deskcloud container")
    parser.add_argument("--config", required=True, help="container YAML configuration")
    parser.add_argument("--log-level", default=None, help="override the configured log level")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
        print(f"Invalid configuration {args.config}: {fields}\n{e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"Cannot read configuration {args.config}: {e}", file=sys.stderr)
        return 2

    configure_logging(args.log_level or config.log_level, node_id=config.node_id[:8])
    container = Container(config)
    try:
        container.start()
    except CloudError as e:
        logger.error(f"Container failed to start: {e.code}: {e.message}", extra={"cause": e.cause})
        return 1

    def shutdown(signum, frame):
        logger.info(f"Received signal {signum}, stopping")
        container.stop(drain=True)

    signal.signal(signal.SIGTERM, shutdown)
    try:
        while not container.wait_stopped(1.0):
            pass
    except KeyboardInterrupt:
        container.stop(drain=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

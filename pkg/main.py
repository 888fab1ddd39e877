"""
deskcloud container entry point.

    python main.py --config docker/master.yaml
"""
import sys

from app.container.cli import main

if __name__ == "__main__":
    sys.exit(main())

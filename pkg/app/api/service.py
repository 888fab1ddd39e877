"""ApiService: serves the HTTP API from inside a container with uvicorn."""
import logging
import threading
from typing import Optional

import uvicorn
from pydantic import BaseModel, Field

from app.api.gateway import CloudGateway
from app.api.main import create_app
from app.container.service import Service

logger = logging.getLogger(__name__)


class ApiOptions(BaseModel):
    host: str = "127.0.0.1"
    port: int = Field(8080, ge=0, le=65535)


class ApiService(Service):
    name = "api"
    Options = ApiOptions

    def __init__(self, container, options=None):
        super().__init__(container, options)
        self.server: Optional[uvicorn.Server] = None
        self._thread: Optional[threading.Thread] = None

    def on_start(self) -> None:
        app = create_app(CloudGateway(self.container))
        config = uvicorn.Config(app, host=self.options.host, port=self.options.port, log_config=None, access_log=False)
        self.server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self.server.run, name=f"{self.node_id[:8]}-api", daemon=True)
        self._thread.start()
        logger.info(f"HTTP API listening on {self.options.host}:{self.options.port}")

    def on_stop(self) -> None:
        if self.server is not None:
            self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5)

    on_kill = on_stop

"""
Configuration management for deskcloud.
Uses Pydantic BaseSettings for process-wide defaults; per-container settings
live in ContainerConfig (app.container.config) and are loaded from YAML.
"""
from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = Field("INFO", description="Root log level")
    LOG_FORMAT: str = Field("text", description="'text' or 'json'")

    # Wire
    DISPATCH_TIMEOUT_S: float = Field(10.0, description="Default envelope reply deadline")
    MAX_MESSAGE_BYTES: int = Field(8 * 1024 * 1024, description="Envelope payload cap")

    # Master-side cadences
    SNAPSHOT_INTERVAL_S: float = Field(5.0, description="Periodic persistence cadence")
    SCHEDULE_TICK_MS: int = Field(200, description="Scheduler tick period")

    # Where containers keep workspaces, snapshots and storage by default
    STATE_DIR: str = Field(".deskcloud", description="Default state directory")

    model_config = {"env_file": ".env", "env_prefix": "DESKCLOUD_", "extra": "ignore"}


# Module-level singleton
settings = Settings()

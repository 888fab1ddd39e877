"""Credentials and principals shared by every request path."""
from enum import Enum
from typing import FrozenSet

from pydantic import BaseModel, ConfigDict


class Credentials(BaseModel):
    user_id: str = "anonymous"
    token: str = ""


class Action(str, Enum):
    SUBMIT = "submit"
    RESERVE = "reserve"
    ADMIN = "admin"


class Principal(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_id: str
    roles: FrozenSet[str] = frozenset({"user"})

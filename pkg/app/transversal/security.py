"""
Security providers: authentication, then authorization against a static
action matrix.

Credential file format, one user per line (``#`` starts a comment)::

    user_id:sha256-hex-of-token[:role,role]

Roles default to ``user``. The ``admin`` role may perform every action.
"""
import hashlib
import hmac
import logging
import threading
from abc import ABC, abstractmethod
from collections import Counter, deque
from pathlib import Path
from typing import Deque, Dict, FrozenSet, Optional, Tuple

from app.errors import Denied
from app.transversal.identity import Action, Credentials, Principal
from app.transversal.schemas import AuditEntry

logger = logging.getLogger(__name__)

AUDIT_LOG_SIZE = 10_000

ACTION_MATRIX: Dict[str, FrozenSet[Action]] = {
    "user": frozenset({Action.SUBMIT, Action.RESERVE}),
    "admin": frozenset({Action.SUBMIT, Action.RESERVE, Action.ADMIN}),
}


def hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def load_credential_file(path: str) -> Dict[str, Tuple[str, FrozenSet[str]]]:
    users: Dict[str, Tuple[str, FrozenSet[str]]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(":")
        if len(parts) < 2 or not parts[0] or not parts[1]:
            logger.warning(f"Ignoring malformed credential line {lineno} in {path}")
            continue
        roles = frozenset(r.strip() for r in parts[2].split(",") if r.strip()) if len(parts) > 2 else frozenset()
        users[parts[0]] = (parts[1].lower(), roles or frozenset({"user"}))
    return users


class SecurityProvider(ABC):
    name = ""
    # Only the newest entries are kept; totals live in `audit`.
    audit_log_size = AUDIT_LOG_SIZE

    def __init__(self):
        self._audit_lock = threading.Lock()
        self.audit: Counter = Counter()
        self.audit_log: Deque[AuditEntry] = deque(maxlen=self.audit_log_size)

    @abstractmethod
    def authenticate(self, credentials: Optional[Credentials]) -> Principal:
        """Return the principal or raise Denied."""

    def allows(self, principal: Principal, action: Action) -> bool:
        return any(action in ACTION_MATRIX.get(role, frozenset()) for role in principal.roles)

    def authorize(self, principal: Principal, action: Action, resource: Optional[str] = None) -> bool:
        allowed = self.allows(principal, action)
        with self._audit_lock:
            self.audit[action] += 1
            self.audit_log.append(AuditEntry(user_id=principal.user_id, action=action, allowed=allowed))
        if not allowed:
            logger.info(f"Denied {action.value} on {resource or '-'} for {principal.user_id}")
        return allowed

    def require(
        self,
        credentials: Optional[Credentials],
        action: Action,
        resource: Optional[str] = None,
        refusal: type = Denied,
    ) -> Principal:
        """
        Authenticate then authorize exactly once; raise ``refusal`` (a Denied
        subclass) on either failure.
        """
        try:
            principal = self.authenticate(credentials)
        except Denied:
            with self._audit_lock:
                self.audit[action] += 1
                self.audit_log.append(AuditEntry(user_id=None, action=action, allowed=False))
            raise refusal()
        if not self.authorize(principal, action, resource):
            raise refusal()
        return principal


class AnonymousProvider(SecurityProvider):
    """Performs no security check at all."""

    name = "anonymous"

    def authenticate(self, credentials: Optional[Credentials]) -> Principal:
        user_id = credentials.user_id if credentials and credentials.user_id else "anonymous"
        return Principal(user_id=user_id, roles=frozenset({"admin"}))


class TokenProvider(SecurityProvider):
    name = "token"

    def __init__(self, credential_file: str):
        super().__init__()
        self.credential_file = credential_file
        self.users = load_credential_file(credential_file)
        logger.info(f"Loaded {len(self.users)} users from {credential_file}")

    def authenticate(self, credentials: Optional[Credentials]) -> Principal:
        if credentials is None or credentials.user_id not in self.users:
            raise Denied()
        expected, roles = self.users[credentials.user_id]
        if not hmac.compare_digest(hash_token(credentials.token), expected):
            raise Denied()
        return Principal(user_id=credentials.user_id, roles=roles)


def build_security_provider(name: str, credential_file: Optional[str] = None) -> SecurityProvider:
    if name == "anonymous":
        return AnonymousProvider()
    if name == "token":
        if not credential_file:
            raise ValueError("token security needs credential_file")
        return TokenProvider(credential_file)
    raise ValueError(f"unknown security provider {name!r}")

"""
Exception hierarchy shared by every deskcloud service.

Each error carries a stable ``code``. Error replies on the wire transport
``{code, message}`` and the receiving side re-raises the class registered for
that code, so a remote failure surfaces exactly like a local one.
"""
from typing import Dict, Optional, Type


class CloudError(Exception):
    """Base class for all middleware errors."""

    code = "CloudError"
    _registry: Dict[str, Type["CloudError"]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        # First class to claim a code wins; aliases reuse a parent's code.
        if "code" in cls.__dict__:
            CloudError._registry.setdefault(cls.code, cls)

    def __init__(self, message: str = "", cause: Optional[str] = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.cause = cause

    def to_payload(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.cause:
            payload["cause"] = self.cause
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "CloudError":
        error_cls = cls._registry.get(payload.get("code", ""), CloudError)
        err = error_cls.__new__(error_cls)
        CloudError.__init__(err, payload.get("message", ""), payload.get("cause"))
        if error_cls is CloudError:
            err.code = payload.get("code", "CloudError")
        return err


# --- fabric -----------------------------------------------------------------

class ProviderUnavailable(CloudError):
    code = "ProviderUnavailable"


class CapacityExceeded(CloudError):
    code = "CapacityExceeded"


# --- container --------------------------------------------------------------

class BindFailure(CloudError):
    code = "BindFailure"


class ServiceLoadFailure(CloudError):
    code = "ServiceLoadFailure"


class UnknownService(CloudError):
    code = "UnknownService"


class UnknownNode(CloudError):
    code = "UnknownNode"


class DispatchTimeout(CloudError):
    code = "Timeout"


class PeerUnreachable(DispatchTimeout):
    """No connection could be made to the peer before the deadline."""


class FrameTooLarge(CloudError):
    code = "FrameTooLarge"


class AlreadyInstalled(CloudError):
    code = "AlreadyInstalled"


class NotInstalled(CloudError):
    code = "NotInstalled"


class DrainTimeout(CloudError):
    code = "DrainTimeout"


class ServiceError(CloudError):
    """A service handler failed with an unexpected exception."""

    code = "ServiceError"


# --- security -------------------------------------------------------------

class Denied(CloudError):
    """Authentication or authorization refused. Carries no detail."""

    code = "Denied"

    def __init__(self, message: str = "", cause: Optional[str] = None):
        super().__init__("", None)


# --- directory --------------------------------------------------------------

class LicenseRejected(CloudError):
    code = "LicenseRejected"


class StaleHeartbeat(CloudError):
    code = "StaleHeartbeat"


class NodeNotRegistered(CloudError):
    code = "NodeNotRegistered"


class NoSeedReachable(CloudError):
    code = "NoSeedReachable"


class NoCatalogue(CloudError):
    code = "NoCatalogue"


# --- reservation ------------------------------------------------------------

class Unauthenticated(Denied):
    code = "Unauthenticated"


class InvalidRequest(CloudError):
    code = "InvalidRequest"


class UnknownReservation(CloudError):
    code = "UnknownReservation"


# --- storage ----------------------------------------------------------------

class ChannelUnreachable(CloudError):
    code = "ChannelUnreachable"


class AuthFailed(Denied):
    code = "AuthFailed"


class FileMissing(CloudError):
    code = "NotFound"


class DigestMismatch(CloudError):
    code = "DigestMismatch"


class PathRejected(CloudError):
    code = "PathRejected"


class StageFailure(CloudError):
    code = "StageFailure"


class DuplicateScheme(CloudError):
    code = "DuplicateScheme"


# --- execution --------------------------------------------------------------

class UnknownApplication(CloudError):
    code = "UnknownApplication"


class UnknownOperation(CloudError):
    code = "UnknownOperation"


class Unauthorized(Denied):
    code = "Unauthorized"


class UnknownJob(CloudError):
    code = "UnknownJob"


class IllegalTransition(CloudError):
    code = "IllegalTransition"


class OperationError(CloudError):
    code = "OperationError"


# --- appmodel / models ------------------------------------------------------

class AppStopped(CloudError):
    code = "AppStopped"


class WaitTimeout(DispatchTimeout):
    """wait() or join() ran past its deadline."""


class UnknownModel(CloudError):
    code = "UnknownModel"


class AlreadyStarted(CloudError):
    code = "AlreadyStarted"


class NotStarted(AlreadyStarted):
    code = "NotStarted"


class JoinTimeout(WaitTimeout):
    code = "JoinTimeout"


class Aborted(CloudError):
    code = "Aborted"


class MissingIntermediate(CloudError):
    code = "MissingIntermediate"


# --- sweep ------------------------------------------------------------------

class UndeclaredPlaceholder(CloudError):
    code = "UndeclaredPlaceholder"


class EmptyDomain(CloudError):
    code = "EmptyDomain"


class TemplateInvalid(CloudError):
    code = "TemplateInvalid"


# --- transversal ------------------------------------------------------------

class StoreCorrupt(CloudError):
    code = "StoreCorrupt"


class StoreUnavailable(CloudError):
    code = "StoreUnavailable"

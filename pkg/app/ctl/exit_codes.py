"""
Process exit codes shared by the ``ctl`` and ``sweep`` commands.

    0  OK
    1  ERROR             any other middleware error
    2  USAGE             bad arguments (argparse)
    3  CONNECTION_FAILED master or peer unreachable, timeout
    4  DENIED            authentication or authorization refused
    5  NOT_FOUND         unknown application, job, node, service or reservation
    6  NOT_GRANTED       reservation rejected or countered
    7  INVALID           invalid request, template or configuration
    8  JOBS_FAILED       the command ran but some jobs did not complete
"""
from enum import IntEnum

from app.errors import (
    Denied,
    DispatchTimeout,
    EmptyDomain,
    InvalidRequest,
    TemplateInvalid,
    UndeclaredPlaceholder,
    UnknownApplication,
    UnknownJob,
    UnknownNode,
    UnknownReservation,
    UnknownService,
)


class ExitCode(IntEnum):
    OK = 0
    ERROR = 1
    USAGE = 2
    CONNECTION_FAILED = 3
    DENIED = 4
    NOT_FOUND = 5
    NOT_GRANTED = 6
    INVALID = 7
    JOBS_FAILED = 8


_BY_ERROR = (
    (DispatchTimeout, ExitCode.CONNECTION_FAILED),
    (Denied, ExitCode.DENIED),
    ((UnknownApplication, UnknownJob, UnknownNode, UnknownReservation, UnknownService), ExitCode.NOT_FOUND),
    ((InvalidRequest, TemplateInvalid, UndeclaredPlaceholder, EmptyDomain), ExitCode.INVALID),
)


def exit_code_for(error: BaseException) -> ExitCode:
    for kinds, code in _BY_ERROR:
        if isinstance(error, kinds):
            return code
    if isinstance(error, (OSError, ConnectionError)):
        return ExitCode.CONNECTION_FAILED
    return ExitCode.ERROR

"""Status codes and the exception types raised across the package."""

from __future__ import annotations

import enum


@enum.unique
class Status(enum.IntEnum):
    """Wire-level response status (16 bit)."""

    OK = 0x0000
    MALFORMED = 0x0001
    AUTH_FAILED = 0x0002
    BAD_HMAC = 0x0003
    COUNTER_MISMATCH = 0x0004
    BAD_INDEX = 0x0005
    EMPTY_SELECTION = 0x0006
    UNSUPPORTED = 0x0007
    KEY_NOT_FOUND = 0x0008
    DEFERRED_UNAVAILABLE = 0x0009


class AttestError(Exception):
    """Base error carrying a wire status.

    Errors that have no wire representation (chain breaks, shadow divergence,
    transport failures) use ``status=None``.
    """

    status: Status | None = None

    def __init__(self, status: Status | None = None, detail: str = ""):
        if status is not None:
            self.status = status
        self.detail = detail
        name = self.status.name if self.status is not None else type(self).__name__
        super().__init__(f"{name}: {detail}" if detail else name)


class CodecError(AttestError):
    status = Status.MALFORMED


class BrokenChain(AttestError):
    def __init__(self, link: int, detail: str = ""):
        self.link = link
        super().__init__(None, f"link {link}: {detail}")


class UnauthorizedIssuer(AttestError):
    pass


class FlushError(AttestError):
    """A buffered command failed while draining the deferred queue."""

    def __init__(self, position: int, status: Status, detail: str = ""):
        self.position = position
        super().__init__(status, f"at position {position} {detail}".rstrip())


class ShadowDivergence(AttestError):
    pass


class TransportError(AttestError):
    pass

"""VEE-side measuring agent.

Covers the CRTM bootstrap, custody of the single live sealed blob, and the
two-mode driver: *deferred* (buffer commands, answer from a shadow bank)
followed by an ordered flush into *synchronous* mode.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Iterable

from . import crypto
from .broker import BrokerClient
from .coprocessor import Capabilities, CreationReceipt, Quote, WrappedAttestationKey
from .errors import AttestError, FlushError, ShadowDivergence, Status
from .shim import ShimClient
from .state import (
    PCR_COUNT,
    SealedVseState,
    ShadowBank,
    check_index,
    extend_bank,
    selected_indices,
    zero_bank,
)
from .transport import Connection

log = logging.getLogger(__name__)

RANDOM_INIT_LABEL = "random-init"


@dataclass(frozen=True)
class BootLayer:
    name: str
    payload: bytes
    pcr_index: int

    @property
    def measurement(self) -> bytes:
        return crypto.sha256(self.payload)


@dataclass(frozen=True)
class LogEntry:
    pcr_index: int
    digest: bytes
    description: str = ""


class EventLog:
    """Ordered measurement records; persisted as ``pcr_index hex(digest) description``."""

    def __init__(self, entries: Iterable[LogEntry] = ()):
        self.entries: list[LogEntry] = list(entries)

    def append(self, pcr_index: int, digest: bytes, description: str = "") -> None:
        self.entries.append(LogEntry(pcr_index, bytes(digest), description))

    def replay(self, initial=None) -> tuple[bytes, ...]:
        bank = tuple(initial) if initial is not None else zero_bank()
        for e in self.entries:
            bank = extend_bank(bank, e.pcr_index, e.digest)
        return bank

    def copy(self) -> EventLog:
        return EventLog(self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, EventLog) and self.entries == other.entries

    def dumps(self) -> str:
        return "".join(f"{e.pcr_index} {e.digest.hex()} {e.description}".rstrip() + "\n" for e in self.entries)

    @classmethod
    def loads(cls, text: str) -> EventLog:
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(" ", 2)
            try:
                entries.append(LogEntry(int(parts[0]), bytes.fromhex(parts[1]), parts[2] if len(parts) > 2 else ""))
            except (ValueError, IndexError):
                raise ValueError(f"event log line {lineno}: {line!r}") from None
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> EventLog:
        with open(path) as fh:
            return cls.loads(fh.read())


class SealedCustody:
    """Holds the one live sealed blob and zeroizes every superseded copy.

    ``on_destroy`` receives the zeroized buffer (test instrumentation).
    """

    def __init__(self, blob, on_destroy: Callable[[bytearray], None] | None = None):
        self._buf = bytearray(_as_bytes(blob))
        self.on_destroy = on_destroy
        self.destroyed = 0

    @property
    def blob(self) -> bytes:
        return bytes(self._buf)

    @property
    def sealed(self) -> SealedVseState:
        return SealedVseState.decode(self._buf)

    def replace(self, new) -> None:
        old, self._buf = self._buf, bytearray(_as_bytes(new))
        _zeroize(old)
        self.destroyed += 1
        if self.on_destroy is not None:
            self.on_destroy(old)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self._buf)


def _as_bytes(blob) -> bytes:
    return blob.encode() if isinstance(blob, SealedVseState) else bytes(blob)


def _zeroize(buf: bytearray) -> None:
    buf[:] = bytes(len(buf))


class Mode(enum.Enum):
    DEFERRED = "deferred"
    SYNCHRONOUS = "synchronous"


class DriverModeError(AttestError):
    pass


class Driver:
    """Per-VEE driver. One logical owner; not for concurrent use.

    In deferred mode commands are queued and answered from the shadow bank,
    which is seeded from the sealed state's current registers. ``flush``
    replays the queue in arrival order and switches to synchronous mode.
    """

    def __init__(
        self,
        sealed,
        *,
        mode: Mode = Mode.DEFERRED,
        shim: ShimClient | None = None,
        log: EventLog | None = None,
        on_destroy=None,
    ):
        self.custody = SealedCustody(sealed, on_destroy)
        self.mode = mode
        self.shim = shim
        self.log = log if log is not None else EventLog()
        self.shadow = ShadowBank(self.custody.sealed.state().pcrs)
        self.buffer: list[tuple[int, bytes, str]] = []
        if mode is Mode.SYNCHRONOUS and shim is None:
            raise ValueError("synchronous driver needs a shim client")

    @property
    def sealed(self) -> SealedVseState:
        return self.custody.sealed

    @property
    def bank(self) -> tuple[bytes, ...]:
        """Registers inside the currently held sealed state."""
        return self.custody.sealed.state().pcrs

    def caps(self) -> Capabilities:
        if self.mode is Mode.DEFERRED:
            return Capabilities(freshness_mode=self.sealed.state().freshness)
        return self.shim.caps()

    def extend(self, pcr_index: int, measurement: bytes, description: str = "") -> Status:
        check_index(pcr_index)
        measurement = crypto.check_digest(measurement, "measurement")
        if self.mode is Mode.DEFERRED:
            self.shadow.extend(pcr_index, measurement)
            self.buffer.append((pcr_index, measurement, description))
        else:
            new = self.shim.extend(self.custody.blob, pcr_index, measurement)
            self.custody.replace(new)
            self.shadow = ShadowBank(new.state().pcrs)
        self.log.append(pcr_index, measurement, description)
        return Status.OK

    def read(self, selection: int) -> list[tuple[int, bytes]]:
        selected_indices(selection)
        if self.mode is Mode.DEFERRED:
            return self.shadow.read(selection)
        return self.shim.read(self.custody.blob, selection)

    def flush(self, shim: ShimClient | None = None) -> Driver:
        if self.mode is not Mode.DEFERRED:
            raise DriverModeError(detail="driver is already synchronous")
        if shim is not None:
            self.shim = shim
        if self.shim is None:
            raise DriverModeError(detail="no shim to flush to")
        position = 0
        while self.buffer:
            index, measurement, _ = self.buffer[0]
            try:
                new = self.shim.extend(self.custody.blob, index, measurement)
            except AttestError as exc:
                if exc.status is None:
                    raise
                raise FlushError(position, exc.status, exc.detail) from exc
            self.custody.replace(new)
            self.buffer.pop(0)
            position += 1
        if self.bank != self.shadow.pcrs:
            diff = [i for i in range(PCR_COUNT) if self.bank[i] != self.shadow.pcrs[i]]
            raise ShadowDivergence(detail=f"registers {diff} differ from shadow")
        self.mode = Mode.SYNCHRONOUS
        log.debug("flushed %d buffered commands", position)
        return self

    def get_quote(self, selection: int, nonce: bytes, ak: WrappedAttestationKey | None = None) -> Quote:
        if self.mode is Mode.DEFERRED:
            raise AttestError(Status.DEFERRED_UNAVAILABLE, "quotes need the coprocessor")
        return self.shim.quote(self.custody.blob, selection, nonce, ak)

    def create_key(self) -> WrappedAttestationKey:
        if self.mode is Mode.DEFERRED:
            raise AttestError(Status.DEFERRED_UNAVAILABLE, "key creation needs the coprocessor")
        return self.shim.create_key(self.custody.blob)


def _broker_client(broker) -> BrokerClient:
    if isinstance(broker, BrokerClient):
        return broker
    if hasattr(broker, "call"):
        return BrokerClient(broker)
    return BrokerClient(Connection(broker))


def crtm_boot(
    broker,
    credential,
    layers: Iterable[BootLayer],
    *,
    shim: ShimClient | None = None,
    on_destroy=None,
) -> tuple[Driver, EventLog, CreationReceipt]:
    """Create a VSE and measure ``layers`` in order.

    ``broker`` is an endpoint, a transport or a :class:`BrokerClient`.
    ``credential`` is zeroized in place when it is a bytearray; either way
    the agent keeps no reference to it once this returns.
    """
    try:
        receipt, shim_endpoint = _broker_client(broker).create_vse(bytes(credential))
    finally:
        if isinstance(credential, bytearray):
            _zeroize(credential)
        del credential
    event_log = EventLog()
    if receipt.random_init_value is not None:
        event_log.append(0, receipt.random_init_value, RANDOM_INIT_LABEL)
    if shim is None:
        shim = ShimClient(Connection(shim_endpoint))
    driver = Driver(
        receipt.sealed_state, mode=Mode.SYNCHRONOUS, shim=shim, log=event_log, on_destroy=on_destroy
    )
    for layer in layers:
        driver.extend(layer.pcr_index, layer.measurement, layer.name)
    return driver, event_log, receipt

"""VSE plaintext state, its fixed 820-byte layout and the sealed envelope.

Plaintext layout (big-endian integers)::

    version(1) | tech_class(1) | flags(1) | pcr_count(1) | seed(32)
    | vse_id(8) | counter(8) | pcrs(24 x 32)

Sealed layout: ``key_id(4) | plaintext(820) | tag(32)`` where the tag is
HMAC-SHA-256 over ``key_id || plaintext``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

from .crypto import DIGEST_SIZE, HmacKey, check_digest, hmac_tag, sha256
from .errors import AttestError, CodecError, Status

STATE_VERSION = 1
PCR_COUNT = 24
BANK = "sha256"
ZERO_PCR = bytes(DIGEST_SIZE)

FLAG_FRESHNESS = 0x01
FLAG_RANDOM_INIT = 0x02

_HEADER = struct.Struct(">BBBB32sQQ")
STATE_SIZE = _HEADER.size + PCR_COUNT * DIGEST_SIZE
SEALED_SIZE = 4 + STATE_SIZE + DIGEST_SIZE
FULL_SELECTION = (1 << PCR_COUNT) - 1

assert STATE_SIZE == 820 and SEALED_SIZE == 856


def zero_bank() -> tuple[bytes, ...]:
    return (ZERO_PCR,) * PCR_COUNT


@dataclass(frozen=True)
class VseState:
    seed: bytes
    vse_id: int
    tech_class: int
    flags: int = 0
    counter: int = 0
    pcrs: tuple[bytes, ...] = field(default_factory=zero_bank)
    version: int = STATE_VERSION

    @property
    def freshness(self) -> bool:
        return bool(self.flags & FLAG_FRESHNESS)

    @property
    def random_init(self) -> bool:
        return bool(self.flags & FLAG_RANDOM_INIT)

    def with_pcrs(self, pcrs, counter: int | None = None) -> VseState:
        return replace(self, pcrs=tuple(pcrs), counter=self.counter if counter is None else counter)


def encode_state(state: VseState) -> bytes:
    if len(state.pcrs) != PCR_COUNT:
        raise CodecError(detail="state must carry 24 registers")
    head = _HEADER.pack(
        state.version,
        state.tech_class,
        state.flags,
        PCR_COUNT,
        state.seed,
        state.vse_id,
        state.counter,
    )
    return head + b"".join(state.pcrs)


def decode_state(data: bytes) -> VseState:
    if len(data) != STATE_SIZE:
        raise CodecError(detail=f"state must be {STATE_SIZE} bytes, got {len(data)}")
    version, tech, flags, count, seed, vse_id, counter = _HEADER.unpack_from(data)
    if version != STATE_VERSION:
        raise CodecError(detail=f"unsupported state version {version}")
    if count != PCR_COUNT:
        raise CodecError(detail=f"pcr_count must be {PCR_COUNT}, got {count}")
    if not flags & FLAG_FRESHNESS and counter:
        raise CodecError(detail="counter set without freshness flag")
    if seed == ZERO_PCR:
        raise CodecError(detail="all-zero seed")
    off = _HEADER.size
    pcrs = tuple(
        bytes(data[off + i * DIGEST_SIZE : off + (i + 1) * DIGEST_SIZE])
        for i in range(PCR_COUNT)
    )
    return VseState(bytes(seed), vse_id, tech, flags, counter, pcrs, version)


@dataclass(frozen=True)
class SealedVseState:
    key_id: int
    plaintext: bytes
    tag: bytes

    def encode(self) -> bytes:
        return struct.pack(">I", self.key_id) + self.plaintext + self.tag

    @classmethod
    def decode(cls, data: bytes) -> SealedVseState:
        if len(data) != SEALED_SIZE:
            raise CodecError(detail=f"sealed state must be {SEALED_SIZE} bytes, got {len(data)}")
        data = bytes(data)
        return cls(
            int.from_bytes(data[:4], "big"),
            data[4 : 4 + STATE_SIZE],
            data[4 + STATE_SIZE :],
        )

    def signed_bytes(self) -> bytes:
        return struct.pack(">I", self.key_id) + self.plaintext

    def state(self) -> VseState:
        """Decode the plaintext without checking the tag.

        Clients may inspect their own state; only a coprocessor can vouch for it.
        """
        return decode_state(self.plaintext)


def seal(key: HmacKey, state: VseState) -> SealedVseState:
    plaintext = encode_state(state)
    sealed = SealedVseState(key.key_id, plaintext, b"")
    return replace(sealed, tag=hmac_tag(key, sealed.signed_bytes()))


def check_index(index: int) -> int:
    if not isinstance(index, int) or not 0 <= index < PCR_COUNT:
        raise AttestError(Status.BAD_INDEX, f"PCR index {index!r} out of range")
    return index


def extend_bank(pcrs, index: int, measurement: bytes) -> tuple[bytes, ...]:
    check_index(index)
    measurement = check_digest(measurement, "measurement")
    bank = list(pcrs)
    bank[index] = sha256(bank[index] + measurement)
    return tuple(bank)


def selected_indices(selection: int) -> list[int]:
    if selection < 0 or selection >> PCR_COUNT:
        raise AttestError(Status.BAD_INDEX, f"selection {selection:#x} names PCRs beyond 23")
    if selection == 0:
        raise AttestError(Status.EMPTY_SELECTION, "no PCR selected")
    return [i for i in range(PCR_COUNT) if selection >> i & 1]


def selection_digest(pcrs, selection: int) -> bytes:
    return sha256(b"".join(pcrs[i] for i in selected_indices(selection)))


def selection_from_indices(indices) -> int:
    sel = 0
    for i in indices:
        sel |= 1 << check_index(i)
    return sel


def encode_selection(selection: int) -> bytes:
    # byte 0 covers PCR0..7 (TPM pcrSelect order)
    if not 0 <= selection < 1 << PCR_COUNT:
        raise AttestError(Status.BAD_INDEX, f"selection {selection:#x} does not fit 24 bits")
    return selection.to_bytes(3, "little")


def decode_selection(data: bytes) -> int:
    if len(data) != 3:
        raise CodecError(detail="selection must be 3 bytes")
    return int.from_bytes(data, "little")


class ShadowBank:
    """Client-side copy of the PCR bank used to answer reads while deferred."""

    def __init__(self, pcrs=None):
        self.pcrs = tuple(pcrs) if pcrs is not None else zero_bank()

    def extend(self, index: int, measurement: bytes) -> bytes:
        self.pcrs = extend_bank(self.pcrs, index, measurement)
        return self.pcrs[index]

    def read(self, selection: int) -> list[tuple[int, bytes]]:
        return [(i, self.pcrs[i]) for i in selected_indices(selection)]

    def __eq__(self, other):
        if isinstance(other, ShadowBank):
            return self.pcrs == other.pcrs
        return NotImplemented

    def __repr__(self):
        touched = [i for i, v in enumerate(self.pcrs) if v != ZERO_PCR]
        return f"ShadowBank(nonzero={touched})"

"""Framing and command/response codecs.

Frame::

    "WAWL" | version(1)=1 | msg_type(1) | body_len(4) | body

Request body::

    command(2) | cred_len(4) | credential | field_count(2) | {len(4) | field}*

Response body::

    status(2) | field_count(2) | {len(4) | field}*

All integers are big-endian. Decoders never read past ``body_len`` and report
every defect as :class:`~vse_attest.errors.CodecError` (status MALFORMED).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import CodecError, Status

MAGIC = b"WAWL"
PROTOCOL_VERSION = 1
MAX_BODY = 1 << 20
MAX_FIELDS = 0xFFFF

_FRAME_HEADER = struct.Struct(">4sBBI")
FRAME_HEADER_SIZE = _FRAME_HEADER.size


class MsgType(enum.IntEnum):
    REQUEST = 1
    RESPONSE = 2


class Command(enum.IntEnum):
    GET_CAPS = 0x0001
    CREATE_VSE = 0x0002
    PCR_EXTEND = 0x0003
    PCR_READ = 0x0004
    QUOTE = 0x0005
    CREATE_KEY = 0x0006
    GEN_HMAC_KEY = 0x0010
    EXPORT_HMAC_KEY = 0x0011
    IMPORT_HMAC_KEY = 0x0012


class Incomplete(Exception):
    """More input is needed before a frame can be decoded."""

    def __init__(self, needed: int):
        self.needed = needed
        super().__init__(f"need {needed} more bytes")


def pack_fields(fields) -> bytes:
    if len(fields) > MAX_FIELDS:
        raise CodecError(detail="too many fields")
    out = [struct.pack(">H", len(fields))]
    for f in fields:
        out.append(struct.pack(">I", len(f)))
        out.append(bytes(f))
    return b"".join(out)


def unpack_fields(data: bytes, offset: int = 0) -> tuple[bytes, ...]:
    """Decode a field list that must end exactly at the end of ``data``."""
    end = len(data)
    if offset + 2 > end:
        raise CodecError(detail="missing field count")
    (count,) = struct.unpack_from(">H", data, offset)
    pos = offset + 2
    fields = []
    for i in range(count):
        if pos + 4 > end:
            raise CodecError(detail=f"field {i}: truncated length")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if n > end - pos:
            raise CodecError(detail=f"field {i}: length {n} overruns body")
        fields.append(bytes(data[pos : pos + n]))
        pos += n
    if pos != end:
        raise CodecError(detail=f"{end - pos} trailing bytes")
    return tuple(fields)


@dataclass(frozen=True)
class Frame:
    msg_type: int
    body: bytes
    version: int = PROTOCOL_VERSION


def encode_frame(frame: Frame) -> bytes:
    if len(frame.body) > MAX_BODY:
        raise CodecError(detail="body exceeds 1 MiB")
    return _FRAME_HEADER.pack(MAGIC, frame.version, frame.msg_type, len(frame.body)) + frame.body


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode one frame from the start of ``data``.

    Returns the frame and the number of bytes consumed. Raises
    :class:`Incomplete` when the buffer holds a valid prefix only.
    """
    head = bytes(data[:4])
    if head != MAGIC[: len(head)]:
        raise CodecError(detail=f"bad magic {head!r}")
    if len(data) < FRAME_HEADER_SIZE:
        raise Incomplete(FRAME_HEADER_SIZE - len(data))
    _, version, msg_type, body_len = _FRAME_HEADER.unpack_from(data)
    if version != PROTOCOL_VERSION:
        raise CodecError(detail=f"unsupported protocol version {version}")
    if msg_type not in (MsgType.REQUEST, MsgType.RESPONSE):
        raise CodecError(detail=f"unknown msg_type {msg_type}")
    if body_len > MAX_BODY:
        raise CodecError(detail=f"body_len {body_len} exceeds 1 MiB")
    total = FRAME_HEADER_SIZE + body_len
    if len(data) < total:
        raise Incomplete(total - len(data))
    return Frame(msg_type, bytes(data[FRAME_HEADER_SIZE:total]), version), total


def decode_whole_frame(data: bytes) -> Frame:
    """Decode a buffer that must contain exactly one frame (end of stream)."""
    try:
        frame, used = decode_frame(data)
    except Incomplete as exc:
        raise CodecError(detail=f"truncated frame, {exc.needed} bytes missing") from None
    if used != len(data):
        raise CodecError(detail=f"{len(data) - used} bytes after frame")
    return frame


class FrameReader:
    """Incremental decoder for a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        frames = []
        while self._buf:
            try:
                frame, used = decode_frame(self._buf)
            except Incomplete:
                break
            del self._buf[:used]
            frames.append(frame)
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class Request:
    command: int
    fields: tuple[bytes, ...] = ()
    credential: bytes = b""


@dataclass(frozen=True)
class Response:
    status: Status
    fields: tuple[bytes, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == Status.OK


def encode_request(req: Request) -> bytes:
    if not 0 <= req.command <= 0xFFFF:
        raise CodecError(detail="command code must fit 16 bits")
    return (
        struct.pack(">HI", req.command, len(req.credential))
        + bytes(req.credential)
        + pack_fields(req.fields)
    )


def decode_request(body: bytes) -> Request:
    if len(body) < 6:
        raise CodecError(detail="request body too short")
    command, cred_len = struct.unpack_from(">HI", body)
    if cred_len > len(body) - 6:
        raise CodecError(detail="credential overruns body")
    credential = bytes(body[6 : 6 + cred_len])
    return Request(command, unpack_fields(body, 6 + cred_len), credential)


def encode_response(resp: Response) -> bytes:
    if resp.status != Status.OK and resp.fields:
        raise CodecError(detail="error responses carry no fields")
    return struct.pack(">H", resp.status) + pack_fields(resp.fields)


def decode_response(body: bytes) -> Response:
    if len(body) < 2:
        raise CodecError(detail="response body too short")
    (code,) = struct.unpack_from(">H", body)
    try:
        status = Status(code)
    except ValueError:
        raise CodecError(detail=f"unknown status {code:#06x}") from None
    fields = unpack_fields(body, 2)
    if status != Status.OK and fields:
        raise CodecError(detail="error response carries fields")
    return Response(status, fields)


def request_frame(req: Request) -> bytes:
    return encode_frame(Frame(MsgType.REQUEST, encode_request(req)))


def response_frame(resp: Response) -> bytes:
    return encode_frame(Frame(MsgType.RESPONSE, encode_response(resp)))


def u8(value: int) -> bytes:
    return struct.pack(">B", value)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def read_u8(data: bytes, what: str = "value") -> int:
    if len(data) != 1:
        raise CodecError(detail=f"{what} must be 1 byte")
    return data[0]


def read_u32(data: bytes, what: str = "value") -> int:
    if len(data) != 4:
        raise CodecError(detail=f"{what} must be 4 bytes")
    return int.from_bytes(data, "big")

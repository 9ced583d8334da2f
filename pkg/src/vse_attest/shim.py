"""Stateless shim: maps TPM-subset wire commands onto coprocessor calls.

Field order per command (request -> OK response):

    GET_CAPS     ()                                   -> caps fields
    PCR_EXTEND   (sealed, index u8, measurement)      -> (sealed,)
    PCR_READ     (sealed, selection 3B)               -> (index u8 || value)*
    QUOTE        (sealed, selection 3B, nonce, ak|"") -> (quote,)
    CREATE_KEY   (sealed,)                            -> (wrapped_ak,)
"""

from __future__ import annotations

import struct

from .coprocessor import Capabilities, Coprocessor, Quote, WrappedAttestationKey
from .errors import AttestError, CodecError, Status
from .state import SealedVseState, decode_selection, encode_selection
from .transport import FrameServer
from .wire import Command, Request, Response, read_u8, u8


def encode_caps(caps: Capabilities) -> tuple[bytes, ...]:
    return (
        u8(caps.pcr_count),
        caps.bank.encode("ascii"),
        u8(caps.version),
        u8(int(caps.freshness_mode)),
        b"".join(struct.pack(">H", c) for c in caps.commands),
    )


def decode_caps(fields) -> Capabilities:
    if len(fields) < 5 or len(fields[4]) % 2:
        raise CodecError(detail="bad capabilities record")
    return Capabilities(
        pcr_count=read_u8(fields[0], "pcr_count"),
        bank=fields[1].decode("ascii", "replace"),
        version=read_u8(fields[2], "version"),
        freshness_mode=bool(read_u8(fields[3], "freshness")),
        commands=tuple(c for (c,) in struct.iter_unpack(">H", fields[4])),
    )


def _expect(req: Request, n: int) -> tuple[bytes, ...]:
    if len(req.fields) != n:
        raise CodecError(detail=f"command {req.command:#06x} takes {n} fields")
    return req.fields


class ShimHandler:
    """``Request -> Response`` for the data path. Holds no per-VSE memory."""

    def __init__(self, coprocessor: Coprocessor):
        self.coprocessor = coprocessor

    def __call__(self, req: Request) -> Response:
        cop = self.coprocessor
        cmd = req.command
        if cmd == Command.GET_CAPS:
            _expect(req, 0)
            return Response(Status.OK, encode_caps(cop.caps()))
        if cmd == Command.PCR_EXTEND:
            sealed, index, measurement = _expect(req, 3)
            new = cop.pcr_extend(sealed, read_u8(index, "index"), measurement)
            return Response(Status.OK, (new.encode(),))
        if cmd == Command.PCR_READ:
            sealed, sel = _expect(req, 2)
            values = cop.pcr_read(sealed, decode_selection(sel))
            return Response(Status.OK, tuple(u8(i) + v for i, v in values))
        if cmd == Command.QUOTE:
            sealed, sel, nonce, ak = _expect(req, 4)
            wrapped = WrappedAttestationKey.decode(ak) if ak else None
            q = cop.quote(sealed, decode_selection(sel), nonce, wrapped)
            return Response(Status.OK, (q.encode(),))
        if cmd == Command.CREATE_KEY:
            (sealed,) = _expect(req, 1)
            return Response(Status.OK, (cop.create_key(sealed).encode(),))
        return Response(Status.UNSUPPORTED)


def serve(coprocessor: Coprocessor, listen=("127.0.0.1", 0)) -> FrameServer:
    return FrameServer(ShimHandler(coprocessor), listen, name="shim")


def expect_ok(resp: Response, n: int | None = None) -> tuple[bytes, ...]:
    if not resp.ok:
        raise AttestError(resp.status)
    if n is not None and len(resp.fields) != n:
        raise CodecError(detail=f"expected {n} response fields, got {len(resp.fields)}")
    return resp.fields


def _blob(sealed) -> bytes:
    return sealed.encode() if isinstance(sealed, SealedVseState) else bytes(sealed)


class ShimClient:
    """Typed calls over any transport exposing ``call(Request) -> Response``."""

    def __init__(self, transport):
        self.transport = transport

    def caps(self) -> Capabilities:
        return decode_caps(expect_ok(self.transport.call(Request(Command.GET_CAPS))))

    def extend(self, sealed, index: int, measurement: bytes) -> SealedVseState:
        if not 0 <= index <= 0xFF:
            raise AttestError(Status.BAD_INDEX, f"PCR index {index} out of range")
        req = Request(Command.PCR_EXTEND, (_blob(sealed), u8(index), bytes(measurement)))
        (blob,) = expect_ok(self.transport.call(req), 1)
        return SealedVseState.decode(blob)

    def read(self, sealed, selection: int) -> list[tuple[int, bytes]]:
        req = Request(Command.PCR_READ, (_blob(sealed), encode_selection(selection)))
        out = []
        for f in expect_ok(self.transport.call(req)):
            if len(f) != 33:
                raise CodecError(detail="PCR value field must be 33 bytes")
            out.append((f[0], f[1:]))
        return out

    def quote(self, sealed, selection: int, nonce: bytes, ak: WrappedAttestationKey | None = None) -> Quote:
        req = Request(
            Command.QUOTE,
            (_blob(sealed), encode_selection(selection), bytes(nonce), ak.encode() if ak else b""),
        )
        (blob,) = expect_ok(self.transport.call(req), 1)
        return Quote.decode(blob)

    def create_key(self, sealed) -> WrappedAttestationKey:
        (blob,) = expect_ok(self.transport.call(Request(Command.CREATE_KEY, (_blob(sealed),))), 1)
        return WrappedAttestationKey.decode(blob)

    def close(self):
        self.transport.close()

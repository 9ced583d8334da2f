"""Credential-gated VSE creation and the administrator key-pool interface.

CREATE_VSE carries the CRTM credential in the request's credential field and
no payload fields. An OK response holds::

    (sealed_state, ek_cert, coprocessor_cert, root_cert, random_init | "", shim_endpoint)

The admin listener is separate from the data path. Every admin request must
carry the admin credential::

    GET_CAPS         ()                    -> caps fields + (master_public,)
    GEN_HMAC_KEY     ()                    -> (key_id u32,)
    EXPORT_HMAC_KEY  (peer_public, key_id|"") -> (wrapped,)
    IMPORT_HMAC_KEY  (wrapped,)            -> (key_id u32,)

Registry file: one credential per line, ``hex(sha256(credential)) tech_class label``;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import hmac
import logging

from . import crypto
from .coprocessor import Coprocessor, CreationReceipt
from .crypto import WrappedKey
from .errors import AttestError, CodecError, Status
from .pki import Certificate
from .shim import decode_caps, encode_caps, expect_ok
from .state import SealedVseState
from .transport import FrameServer
from .wire import Command, Request, Response, read_u32, u32

log = logging.getLogger(__name__)


def registry_load(path) -> dict[bytes, int]:
    registry: dict[bytes, int] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(maxsplit=2)
            if len(parts) < 2:
                raise CodecError(detail=f"{path}:{lineno}: expected 'hash tech_class [label]'")
            try:
                digest = bytes.fromhex(parts[0])
                tech = int(parts[1], 0)
            except ValueError:
                raise CodecError(detail=f"{path}:{lineno}: bad hash or tech_class") from None
            if len(digest) != 32 or not 0 <= tech <= 0xFF:
                raise CodecError(detail=f"{path}:{lineno}: hash must be 32 bytes, tech_class 8 bit")
            if digest in registry:
                raise CodecError(detail=f"{path}:{lineno}: duplicate credential hash")
            registry[digest] = tech
    return registry


def registry_add(path, credential: bytes, tech_class: int, label: str = "") -> str:
    """Append a credential entry; returns the hex hash written."""
    digest = crypto.sha256(credential).hex()
    with open(path, "a") as fh:
        fh.write(f"{digest} {tech_class} {label}".rstrip() + "\n")
    return digest


def encode_receipt(receipt: CreationReceipt, shim_endpoint: str) -> tuple[bytes, ...]:
    return (
        receipt.sealed_state.encode(),
        receipt.ek_certificate.encode(),
        receipt.coprocessor_certificate.encode() if receipt.coprocessor_certificate else b"",
        receipt.root_certificate.encode() if receipt.root_certificate else b"",
        receipt.random_init_value or b"",
        shim_endpoint.encode(),
    )


def decode_receipt(fields) -> tuple[CreationReceipt, str]:
    if len(fields) != 6:
        raise CodecError(detail="creation receipt needs 6 fields")
    sealed, ek, cop, root, rinit, shim = fields
    if rinit and len(rinit) != 32:
        raise CodecError(detail="random init value must be 32 bytes")
    receipt = CreationReceipt(
        SealedVseState.decode(sealed),
        Certificate.decode(ek),
        rinit or None,
        Certificate.decode(cop) if cop else None,
        Certificate.decode(root) if root else None,
    )
    return receipt, shim.decode()


class BrokerHandler:
    def __init__(self, coprocessor: Coprocessor, shim_endpoint: str = "", registry=None):
        self.coprocessor = coprocessor
        self.shim_endpoint = shim_endpoint
        self.registry = coprocessor.config.credential_registry if registry is None else registry
        self.issued = 0

    def __call__(self, req: Request) -> Response:
        if req.command != Command.CREATE_VSE:
            return Response(Status.UNSUPPORTED)
        if req.fields:
            raise CodecError(detail="CREATE_VSE takes no fields")
        if not req.credential or crypto.sha256(req.credential) not in self.registry:
            return Response(Status.AUTH_FAILED)
        receipt = self.coprocessor.create_vse(req.credential)
        self.issued += 1
        return Response(Status.OK, encode_receipt(receipt, self.shim_endpoint))


def serve(
    coprocessor: Coprocessor, listen=("127.0.0.1", 0), *, shim_endpoint: str = "", registry=None
) -> FrameServer:
    """Start-ready broker server. ``registry`` replaces the coprocessor's credential table."""
    if registry is not None:
        missing = set(registry.values()) - set(coprocessor.config.tech_signing_keys)
        if missing:
            raise ValueError(f"registry names tech classes without keys: {sorted(missing)}")
        coprocessor.config.credential_registry = dict(registry)
    if not coprocessor.config.credential_registry:
        raise ValueError("refusing to start a broker with an empty credential registry")
    return FrameServer(BrokerHandler(coprocessor, shim_endpoint), listen, name="broker")


class BrokerClient:
    def __init__(self, transport):
        self.transport = transport

    def create_vse(self, credential: bytes) -> tuple[CreationReceipt, str]:
        resp = self.transport.call(Request(Command.CREATE_VSE, (), bytes(credential)))
        return decode_receipt(expect_ok(resp))

    def close(self):
        self.transport.close()


class AdminHandler:
    def __init__(self, coprocessor: Coprocessor, admin_credential_hash: bytes | None = None):
        self.coprocessor = coprocessor
        self.admin_hash = admin_credential_hash or coprocessor.config.admin_credential_hash

    def __call__(self, req: Request) -> Response:
        if self.admin_hash is None or not hmac.compare_digest(
            crypto.sha256(req.credential), self.admin_hash
        ):
            return Response(Status.AUTH_FAILED)
        cop = self.coprocessor
        if req.command == Command.GET_CAPS:
            return Response(Status.OK, encode_caps(cop.caps()) + (cop.master_public,))
        if req.command == Command.GEN_HMAC_KEY:
            return Response(Status.OK, (u32(cop.gen_hmac_key()),))
        if req.command == Command.EXPORT_HMAC_KEY:
            if len(req.fields) != 2:
                raise CodecError(detail="EXPORT_HMAC_KEY takes 2 fields")
            peer, kid = req.fields
            wrapped = cop.export_hmac_key(peer, read_u32(kid, "key_id") if kid else None)
            return Response(Status.OK, (wrapped.encode(),))
        if req.command == Command.IMPORT_HMAC_KEY:
            if len(req.fields) != 1:
                raise CodecError(detail="IMPORT_HMAC_KEY takes 1 field")
            return Response(Status.OK, (u32(cop.import_hmac_key(WrappedKey.decode(req.fields[0]))),))
        return Response(Status.UNSUPPORTED)


def serve_admin(coprocessor: Coprocessor, listen=("127.0.0.1", 0), admin_credential_hash=None) -> FrameServer:
    return FrameServer(AdminHandler(coprocessor, admin_credential_hash), listen, name="admin")


class AdminClient:
    def __init__(self, transport, credential: bytes):
        self.transport = transport
        self.credential = bytes(credential)

    def _call(self, command, fields=()) -> tuple[bytes, ...]:
        return expect_ok(self.transport.call(Request(command, tuple(fields), self.credential)))

    def master_public(self) -> bytes:
        fields = self._call(Command.GET_CAPS)
        decode_caps(fields[:5])
        if len(fields) != 6 or len(fields[5]) != 32:
            raise CodecError(detail="admin caps lack master public key")
        return fields[5]

    def gen_hmac_key(self) -> int:
        (kid,) = self._call(Command.GEN_HMAC_KEY)
        return read_u32(kid, "key_id")

    def export_hmac_key(self, peer_public: bytes, key_id: int | None = None) -> WrappedKey:
        (blob,) = self._call(Command.EXPORT_HMAC_KEY, (peer_public, u32(key_id) if key_id else b""))
        return WrappedKey.decode(blob)

    def import_hmac_key(self, wrapped: WrappedKey) -> int:
        (kid,) = self._call(Command.IMPORT_HMAC_KEY, (wrapped.encode(),))
        return read_u32(kid, "key_id")


def admin_distribute_hmac_key(origin: AdminClient, target: AdminClient, key_id: int | None = None) -> int:
    """Move the origin's HMAC key into the target without exposing it."""
    wrapped = origin.export_hmac_key(target.master_public(), key_id)
    kid = target.import_hmac_key(wrapped)
    if key_id is not None and kid != key_id:
        raise AttestError(Status.AUTH_FAILED, "target imported a different key")
    log.info("distributed HMAC key %#010x", kid)
    return kid

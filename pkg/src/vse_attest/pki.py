"""Compact binary certificates and chain walking.

A chain is always ``[root, coprocessor, leaf]``: the manufacturer root
(self-signed) certifies a coprocessor identity key, which in turn certifies
per-VSE endorsement (EK) and attestation-key (AK) certificates.

Certificates are field lists in the wire codec's length-prefixed convention::

    version | kind | subject_public_key | seed | tech_class | random_init_value
    | coprocessor_id | issuer_key_id | signature

Optional fields are empty. The signature covers the encoding of the first
eight fields.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from . import crypto
from .crypto import SigningKeyPair
from .errors import BrokenChain, CodecError, UnauthorizedIssuer
from .wire import pack_fields, read_u8, read_u32, u8, u32, unpack_fields

CERT_VERSION = 1


class CertKind(enum.IntEnum):
    ROOT = 0
    COPROCESSOR = 1
    EK = 2
    AK = 3


# issuer kind -> subject kinds it may certify
_AUTHORIZED = {
    CertKind.ROOT: {CertKind.ROOT, CertKind.COPROCESSOR},
    CertKind.COPROCESSOR: {CertKind.EK, CertKind.AK},
}


@dataclass(frozen=True)
class Certificate:
    kind: CertKind
    subject_public_key: bytes = b""
    seed: bytes | None = None
    tech_class: int | None = None
    random_init_value: bytes | None = None
    coprocessor_id: int = 0
    issuer_key_id: int = 0
    signature: bytes = b""
    version: int = CERT_VERSION

    def _fields(self) -> list[bytes]:
        return [
            u8(self.version),
            u8(self.kind),
            self.subject_public_key,
            self.seed or b"",
            b"" if self.tech_class is None else u8(self.tech_class),
            self.random_init_value or b"",
            u32(self.coprocessor_id),
            u32(self.issuer_key_id),
        ]

    def tbs(self) -> bytes:
        return pack_fields(self._fields())

    def encode(self) -> bytes:
        return pack_fields(self._fields() + [self.signature])

    @classmethod
    def decode(cls, data: bytes) -> Certificate:
        f = unpack_fields(data)
        if len(f) != 9:
            raise CodecError(detail=f"certificate needs 9 fields, got {len(f)}")
        version = read_u8(f[0], "version")
        if version != CERT_VERSION:
            raise CodecError(detail=f"unsupported certificate version {version}")
        try:
            kind = CertKind(read_u8(f[1], "kind"))
        except ValueError:
            raise CodecError(detail="unknown certificate kind") from None
        for name, value, size in (("seed", f[3], 32), ("random_init_value", f[5], 32)):
            if value and len(value) != size:
                raise CodecError(detail=f"{name} must be {size} bytes")
        if f[4] and len(f[4]) != 1:
            raise CodecError(detail="tech_class must be 1 byte")
        return cls(
            kind=kind,
            subject_public_key=f[2],
            seed=f[3] or None,
            tech_class=f[4][0] if f[4] else None,
            random_init_value=f[5] or None,
            coprocessor_id=read_u32(f[6], "coprocessor_id"),
            issuer_key_id=read_u32(f[7], "issuer_key_id"),
            signature=f[8],
            version=version,
        )


def issue(
    issuer: SigningKeyPair,
    issuer_kind: CertKind,
    subject_kind: CertKind,
    *,
    subject_public_key: bytes = b"",
    seed: bytes | None = None,
    tech_class: int | None = None,
    random_init_value: bytes | None = None,
    coprocessor_id: int = 0,
) -> Certificate:
    if subject_kind not in _AUTHORIZED.get(issuer_kind, ()):
        raise UnauthorizedIssuer(
            detail=f"{issuer_kind.name} may not certify {subject_kind.name}"
        )
    if subject_kind in (CertKind.EK, CertKind.AK):
        if seed is None or tech_class is None:
            raise ValueError("EK/AK certificates carry seed and tech_class")
    cert = Certificate(
        kind=subject_kind,
        subject_public_key=subject_public_key,
        seed=seed,
        tech_class=tech_class,
        random_init_value=random_init_value,
        coprocessor_id=coprocessor_id,
        issuer_key_id=issuer.key_id,
    )
    return replace(cert, signature=issuer.sign(cert.tbs()))


def self_signed_root(root: SigningKeyPair) -> Certificate:
    return issue(root, CertKind.ROOT, CertKind.ROOT, subject_public_key=root.public)


@dataclass(frozen=True)
class ChainFacts:
    seed: bytes | None
    tech_class: int | None
    coprocessor_id: int
    signer_public: bytes
    leaf: Certificate


def _as_cert(c, link: int) -> Certificate:
    if isinstance(c, Certificate):
        return c
    try:
        return Certificate.decode(c)
    except CodecError as exc:
        raise BrokenChain(link, f"undecodable certificate ({exc.detail})") from None


def _signed_by(cert: Certificate, public: bytes) -> bool:
    try:
        return crypto.verify(public, cert.tbs(), cert.signature)
    except CodecError:
        return False


def verify_chain(leaf, intermediates, trusted_root_public: bytes) -> ChainFacts:
    """Walk ``[root, coprocessor, leaf]`` back to ``trusted_root_public``.

    ``intermediates`` is ``[root_cert, coprocessor_cert]``; entries may be
    :class:`Certificate` objects or their encodings. Link indices in
    :class:`BrokenChain` follow chain order: 0 root, 1 coprocessor, 2 leaf.
    """
    if len(intermediates) != 2:
        raise BrokenChain(0, "expected [root, coprocessor] intermediates")
    root = _as_cert(intermediates[0], 0)
    if root.kind != CertKind.ROOT or root.subject_public_key != trusted_root_public:
        raise BrokenChain(0, "root certificate does not match trusted root")
    if not _signed_by(root, trusted_root_public):
        raise BrokenChain(0, "bad root self-signature")

    cop = _as_cert(intermediates[1], 1)
    if cop.kind != CertKind.COPROCESSOR:
        raise BrokenChain(1, f"expected COPROCESSOR, got {cop.kind.name}")
    if cop.issuer_key_id != crypto.key_id_for(trusted_root_public) or not _signed_by(
        cop, trusted_root_public
    ):
        raise BrokenChain(1, "coprocessor certificate not signed by root")

    leaf = _as_cert(leaf, 2)
    if leaf.kind not in (CertKind.EK, CertKind.AK):
        raise BrokenChain(2, f"leaf must be EK or AK, got {leaf.kind.name}")
    if leaf.coprocessor_id != cop.coprocessor_id:
        raise BrokenChain(2, "leaf names a different coprocessor")
    if leaf.issuer_key_id != crypto.key_id_for(cop.subject_public_key) or not _signed_by(
        leaf, cop.subject_public_key
    ):
        raise BrokenChain(2, "leaf not signed by coprocessor identity")
    return ChainFacts(
        seed=leaf.seed,
        tech_class=leaf.tech_class,
        coprocessor_id=leaf.coprocessor_id,
        signer_public=leaf.subject_public_key,
        leaf=leaf,
    )


def load_certificate(path) -> Certificate:
    with open(path, "rb") as fh:
        return Certificate.decode(fh.read())


def save_certificate(cert: Certificate, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cert.encode())

"""Fixed-algorithm cryptographic facade.

Everything else in the package goes through these helpers so the algorithm
choice lives in one place: SHA-256, HMAC-SHA-256, Ed25519 and AES-256-GCM
key wrapping (12-byte nonce). Randomness is injectable so tests and attack
scenarios replay deterministically.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
import struct
import threading
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AttestError, CodecError, Status

DIGEST_SIZE = 32
KEY_SIZE = 32
NONCE_SIZE = 12
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NO_ENC = serialization.NoEncryption()


class RandomSource:
    """Callable byte source; ``os.urandom`` unless seeded.

    A seeded source is reproducible and must only be used in tests and
    scripted scenarios.
    """

    def __init__(self, seed: int | None = None):
        self._lock = threading.Lock()
        self._prng = None if seed is None else random.Random(seed)

    @property
    def deterministic(self) -> bool:
        return self._prng is not None

    def __call__(self, n: int) -> bytes:
        if n <= 0:
            raise ValueError("n must be positive")
        if self._prng is None:
            return os.urandom(n)
        with self._lock:
            return self._prng.randbytes(n)


_system_random = RandomSource()


def random_bytes(n: int, rng: RandomSource | None = None) -> bytes:
    return (rng or _system_random)(n)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def check_digest(value: bytes, what: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise CodecError(detail=f"{what} must be {DIGEST_SIZE} bytes")
    return bytes(value)


def key_id_for(material: bytes) -> int:
    """Stable nonzero 32-bit identifier derived from public key material."""
    kid = int.from_bytes(sha256(b"key-id" + material)[:4], "big")
    return kid or 1


@dataclass(frozen=True)
class HmacKey:
    key_id: int
    secret: bytes = field(repr=False)

    def __post_init__(self):
        if not 0 < self.key_id < 2**32:
            raise ValueError("key_id must be a nonzero 32-bit value")
        if not self.secret:
            raise ValueError("HMAC secret is empty")

    @classmethod
    def generate(cls, rng: RandomSource | None = None) -> HmacKey:
        while True:
            kid = int.from_bytes(random_bytes(4, rng), "big")
            if kid:
                return cls(kid, random_bytes(KEY_SIZE, rng))


def hmac_tag(key: HmacKey, data: bytes) -> bytes:
    return hmac.new(key.secret, data, hashlib.sha256).digest()


def hmac_verify(key: HmacKey, data: bytes, tag: bytes) -> bool:
    # compare_digest: timing independent of the first differing byte
    return hmac.compare_digest(hmac_tag(key, data), tag)


@dataclass(frozen=True)
class SigningKeyPair:
    """Ed25519 keypair; ``private`` is the 32-byte RFC 8032 seed."""

    public: bytes
    private: bytes = field(repr=False)
    key_id: int = 0

    @classmethod
    def from_private(cls, private: bytes) -> SigningKeyPair:
        if len(private) != KEY_SIZE:
            raise CodecError(detail="Ed25519 private key must be 32 bytes")
        sk = Ed25519PrivateKey.from_private_bytes(private)
        public = sk.public_key().public_bytes(_RAW, _RAW_PUB)
        return cls(public, bytes(private), key_id_for(public))

    @classmethod
    def generate(cls, rng: RandomSource | None = None) -> SigningKeyPair:
        return cls.from_private(random_bytes(KEY_SIZE, rng))

    def sign(self, message: bytes) -> bytes:
        return sign(self, message)


def sign(key: SigningKeyPair, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(key.private).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    if len(public) != PUBLIC_KEY_SIZE:
        raise CodecError(detail="Ed25519 public key must be 32 bytes")
    if len(signature) != SIGNATURE_SIZE:
        raise CodecError(detail="Ed25519 signature must be 64 bytes")
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def derive_key(master: bytes, label: bytes) -> bytes:
    return HKDF(hashes.SHA256(), KEY_SIZE, salt=None, info=label).derive(master)


@dataclass(frozen=True)
class WrappedKey:
    """AEAD-wrapped key material.

    ``ephemeral`` is empty for symmetric wraps and holds the sender's X25519
    ephemeral public key for wraps addressed to a peer's public master key.
    """

    recipient_key_id: int
    nonce: bytes
    ciphertext: bytes
    ephemeral: bytes = b""

    def encode(self) -> bytes:
        return (
            struct.pack(">IB", self.recipient_key_id, len(self.ephemeral))
            + self.ephemeral
            + self.nonce
            + struct.pack(">I", len(self.ciphertext))
            + self.ciphertext
        )

    @classmethod
    def decode(cls, data: bytes) -> WrappedKey:
        try:
            rid, elen = struct.unpack_from(">IB", data, 0)
            pos = 5
            eph = data[pos : pos + elen]
            pos += elen
            nonce = data[pos : pos + NONCE_SIZE]
            pos += NONCE_SIZE
            (clen,) = struct.unpack_from(">I", data, pos)
            pos += 4
            ct = data[pos : pos + clen]
        except struct.error as exc:
            raise CodecError(detail=f"wrapped key: {exc}") from None
        if len(eph) != elen or len(nonce) != NONCE_SIZE or len(ct) != clen:
            raise CodecError(detail="wrapped key truncated")
        if pos + clen != len(data):
            raise CodecError(detail="wrapped key has trailing bytes")
        return cls(rid, bytes(nonce), bytes(ct), bytes(eph))


def _aad(recipient_key_id: int, aad: bytes) -> bytes:
    return struct.pack(">I", recipient_key_id) + aad


def wrap_key(
    master: bytes,
    payload: bytes,
    *,
    recipient_key_id: int = 0,
    aad: bytes = b"",
    rng: RandomSource | None = None,
) -> WrappedKey:
    if not payload:
        raise ValueError("payload must be nonempty")
    nonce = random_bytes(NONCE_SIZE, rng)
    ct = AESGCM(master).encrypt(nonce, payload, _aad(recipient_key_id, aad))
    return WrappedKey(recipient_key_id, nonce, ct)


def unwrap_key(master: bytes, wrapped: WrappedKey, *, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(master).decrypt(
            wrapped.nonce, wrapped.ciphertext, _aad(wrapped.recipient_key_id, aad)
        )
    except (InvalidTag, ValueError):
        raise AttestError(Status.AUTH_FAILED, "key unwrap failed") from None


class MasterKey:
    """A coprocessor's master wrapping secret and the keys derived from it.

    The secret itself never leaves this object. Peers address wrapped keys to
    :attr:`public` (X25519); local wraps use an HKDF-derived AES key.
    """

    def __init__(self, secret: bytes):
        if len(secret) != KEY_SIZE:
            raise ValueError("master secret must be 32 bytes")
        self._secret = bytes(secret)
        self._local = derive_key(secret, b"vse-attest local wrap")
        self._transport = X25519PrivateKey.from_private_bytes(
            derive_key(secret, b"vse-attest transport")
        )
        self.public = self._transport.public_key().public_bytes(_RAW, _RAW_PUB)
        self.key_id = key_id_for(self.public)

    def __repr__(self):
        return f"MasterKey(key_id={self.key_id:#010x})"

    @property
    def secret(self) -> bytes:
        return self._secret

    def wrap(self, payload: bytes, aad: bytes = b"", rng=None) -> WrappedKey:
        return wrap_key(
            self._local, payload, recipient_key_id=self.key_id, aad=aad, rng=rng
        )

    def unwrap(self, wrapped: WrappedKey, aad: bytes = b"") -> bytes:
        if wrapped.ephemeral:
            shared = self._transport.exchange(
                X25519PublicKey.from_public_bytes(wrapped.ephemeral)
            )
            kek = derive_key(shared, b"vse-attest peer wrap" + wrapped.ephemeral)
            return unwrap_key(kek, wrapped, aad=aad)
        if wrapped.recipient_key_id != self.key_id:
            raise AttestError(Status.AUTH_FAILED, "wrapped for another master key")
        return unwrap_key(self._local, wrapped, aad=aad)


def wrap_for_peer(
    peer_public: bytes, payload: bytes, aad: bytes = b"", rng=None
) -> WrappedKey:
    """Wrap ``payload`` so only the holder of the matching master can open it."""
    if len(peer_public) != PUBLIC_KEY_SIZE:
        raise CodecError(detail="peer master public key must be 32 bytes")
    eph = X25519PrivateKey.from_private_bytes(random_bytes(KEY_SIZE, rng))
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    try:
        shared = eph.exchange(X25519PublicKey.from_public_bytes(peer_public))
    except ValueError:
        raise CodecError(detail="invalid peer master public key") from None
    kek = derive_key(shared, b"vse-attest peer wrap" + eph_pub)
    wrapped = wrap_key(
        kek, payload, recipient_key_id=key_id_for(peer_public), aad=aad, rng=rng
    )
    return WrappedKey(wrapped.recipient_key_id, wrapped.nonce, wrapped.ciphertext, eph_pub)

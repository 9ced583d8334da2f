"""Stateless cryptographic-coprocessor emulator.

The coprocessor keeps only long-lived keys. Every per-VSE value travels with
the request inside a sealed state and is checked against the shared HMAC key
before use. The one optional exception is the freshness counter table, a
``vse_id -> counter`` map that detects stale (replayed) sealed states.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from dataclasses import dataclass, field, replace

from . import crypto
from .crypto import HmacKey, MasterKey, RandomSource, SigningKeyPair, WrappedKey
from .errors import AttestError, CodecError, Status
from .pki import CertKind, Certificate, issue, self_signed_root
from .state import (
    BANK,
    FLAG_FRESHNESS,
    FLAG_RANDOM_INIT,
    PCR_COUNT,
    STATE_VERSION,
    SealedVseState,
    VseState,
    decode_state,
    extend_bank,
    seal,
    selected_indices,
    selection_digest,
    zero_bank,
)
from .wire import Command, pack_fields, unpack_fields

log = logging.getLogger(__name__)

QUOTE_MAGIC = b"WQUO"
QUOTE_VERSION = 1
_QUOTE_BODY = struct.Struct(">4sBB32s3sQ32s32sI")

SUPPORTED_COMMANDS = (
    Command.GET_CAPS,
    Command.CREATE_VSE,
    Command.PCR_EXTEND,
    Command.PCR_READ,
    Command.QUOTE,
    Command.CREATE_KEY,
)


@dataclass(frozen=True)
class Capabilities:
    pcr_count: int = PCR_COUNT
    bank: str = BANK
    version: int = STATE_VERSION
    freshness_mode: bool = False
    commands: tuple[int, ...] = tuple(int(c) for c in SUPPORTED_COMMANDS)


@dataclass(frozen=True)
class Quote:
    tech_class: int
    seed: bytes
    selection: int
    counter: int
    nonce: bytes
    digest: bytes
    signer_key_id: int
    signature: bytes = b""
    version: int = QUOTE_VERSION

    def signed_bytes(self) -> bytes:
        return _QUOTE_BODY.pack(
            QUOTE_MAGIC,
            self.version,
            self.tech_class,
            self.seed,
            self.selection.to_bytes(3, "little"),
            self.counter,
            self.nonce,
            self.digest,
            self.signer_key_id,
        )

    def encode(self) -> bytes:
        return self.signed_bytes() + struct.pack(">H", len(self.signature)) + self.signature

    @classmethod
    def decode(cls, data: bytes) -> Quote:
        n = _QUOTE_BODY.size
        if len(data) < n + 2:
            raise CodecError(detail="quote truncated")
        magic, ver, tech, seed, sel, counter, nonce, digest, kid = _QUOTE_BODY.unpack_from(data)
        if magic != QUOTE_MAGIC:
            raise CodecError(detail="bad quote magic")
        if ver != QUOTE_VERSION:
            raise CodecError(detail=f"unsupported quote version {ver}")
        (slen,) = struct.unpack_from(">H", data, n)
        if len(data) != n + 2 + slen:
            raise CodecError(detail="quote signature length mismatch")
        return cls(
            tech, seed, int.from_bytes(sel, "little"), counter, nonce, digest, kid,
            bytes(data[n + 2 :]), ver,
        )


@dataclass(frozen=True)
class WrappedAttestationKey:
    wrapped: WrappedKey
    certificate: Certificate

    @property
    def public(self) -> bytes:
        return self.certificate.subject_public_key

    def encode(self) -> bytes:
        return pack_fields([self.wrapped.encode(), self.certificate.encode()])

    @classmethod
    def decode(cls, data: bytes) -> WrappedAttestationKey:
        f = unpack_fields(data)
        if len(f) != 2:
            raise CodecError(detail="wrapped AK needs 2 fields")
        return cls(WrappedKey.decode(f[0]), Certificate.decode(f[1]))


@dataclass(frozen=True)
class CreationReceipt:
    sealed_state: SealedVseState
    ek_certificate: Certificate
    random_init_value: bytes | None = None
    coprocessor_certificate: Certificate | None = None
    root_certificate: Certificate | None = None

    @property
    def chain(self) -> list[Certificate]:
        return [self.root_certificate, self.coprocessor_certificate, self.ek_certificate]


@dataclass
class CoprocessorConfig:
    coprocessor_id: int
    identity_key: SigningKeyPair
    master_wrap_key: bytes
    active_hmac_key: HmacKey
    tech_signing_keys: dict[int, SigningKeyPair]
    credential_registry: dict[bytes, int] = field(default_factory=dict)
    freshness_mode: bool = False
    random_init_mode: bool = False
    identity_certificate: Certificate | None = None
    root_certificate: Certificate | None = None
    admin_credential_hash: bytes | None = None

    def __post_init__(self):
        missing = set(self.credential_registry.values()) - set(self.tech_signing_keys)
        if missing:
            raise ValueError(f"no signing key for tech classes {sorted(missing)}")

    def to_json(self) -> dict:
        cert = lambda c: c.encode().hex() if c is not None else None  # noqa: E731
        return {
            "coprocessor_id": self.coprocessor_id,
            "identity_key": self.identity_key.private.hex(),
            "master_wrap_key": self.master_wrap_key.hex(),
            "hmac_key": {"key_id": self.active_hmac_key.key_id,
                         "secret": self.active_hmac_key.secret.hex()},
            "tech_signing_keys": {str(t): k.private.hex() for t, k in self.tech_signing_keys.items()},
            "credential_registry": {h.hex(): t for h, t in self.credential_registry.items()},
            "freshness_mode": self.freshness_mode,
            "random_init_mode": self.random_init_mode,
            "identity_certificate": cert(self.identity_certificate),
            "root_certificate": cert(self.root_certificate),
            "admin_credential_hash": self.admin_credential_hash.hex() if self.admin_credential_hash else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> CoprocessorConfig:
        try:
            cert = lambda v: Certificate.decode(bytes.fromhex(v)) if v else None  # noqa: E731
            return cls(
                coprocessor_id=int(obj["coprocessor_id"]),
                identity_key=SigningKeyPair.from_private(bytes.fromhex(obj["identity_key"])),
                master_wrap_key=bytes.fromhex(obj["master_wrap_key"]),
                active_hmac_key=HmacKey(obj["hmac_key"]["key_id"], bytes.fromhex(obj["hmac_key"]["secret"])),
                tech_signing_keys={
                    int(t): SigningKeyPair.from_private(bytes.fromhex(k))
                    for t, k in obj["tech_signing_keys"].items()
                },
                credential_registry={
                    bytes.fromhex(h): int(t) for h, t in obj.get("credential_registry", {}).items()
                },
                freshness_mode=bool(obj.get("freshness_mode", False)),
                random_init_mode=bool(obj.get("random_init_mode", False)),
                identity_certificate=cert(obj.get("identity_certificate")),
                root_certificate=cert(obj.get("root_certificate")),
                admin_credential_hash=bytes.fromhex(obj["admin_credential_hash"])
                if obj.get("admin_credential_hash") else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CodecError(detail=f"coprocessor config: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> CoprocessorConfig:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class Manufacturer:
    """Holds the root key and provisions coprocessor identities."""

    def __init__(self, root_key: SigningKeyPair | None = None, rng: RandomSource | None = None):
        self.rng = rng
        self.root_key = root_key or SigningKeyPair.generate(rng)
        self.root_certificate = self_signed_root(self.root_key)

    @property
    def root_public(self) -> bytes:
        return self.root_key.public

    def certify(self, identity: SigningKeyPair, coprocessor_id: int) -> Certificate:
        return issue(
            self.root_key, CertKind.ROOT, CertKind.COPROCESSOR,
            subject_public_key=identity.public, coprocessor_id=coprocessor_id,
        )

    def provision(
        self,
        coprocessor_id: int,
        *,
        tech_classes=(1,),
        credentials: dict[bytes, int] | None = None,
        freshness_mode: bool = False,
        random_init_mode: bool = False,
        hmac_key: HmacKey | None = None,
        admin_credential: bytes | None = None,
    ) -> CoprocessorConfig:
        """Build a ready-to-run config; ``credentials`` maps raw credential to tech class."""
        rng = self.rng
        identity = SigningKeyPair.generate(rng)
        classes = set(tech_classes) | set((credentials or {}).values())
        return CoprocessorConfig(
            coprocessor_id=coprocessor_id,
            identity_key=identity,
            master_wrap_key=crypto.random_bytes(crypto.KEY_SIZE, rng),
            active_hmac_key=hmac_key or HmacKey.generate(rng),
            tech_signing_keys={t: SigningKeyPair.generate(rng) for t in sorted(classes)},
            credential_registry={crypto.sha256(c): t for c, t in (credentials or {}).items()},
            freshness_mode=freshness_mode,
            random_init_mode=random_init_mode,
            identity_certificate=self.certify(identity, coprocessor_id),
            root_certificate=self.root_certificate,
            admin_credential_hash=crypto.sha256(admin_credential) if admin_credential else None,
        )


def _as_sealed(sealed) -> SealedVseState:
    if isinstance(sealed, SealedVseState):
        return sealed
    return SealedVseState.decode(sealed)


class Coprocessor:
    """Emulated coprocessor; safe for concurrent use from many threads."""

    def __init__(self, config: CoprocessorConfig, rng: RandomSource | None = None):
        self.config = config
        self.rng = rng
        self._master = MasterKey(config.master_wrap_key)
        self._hmac_keys: dict[int, HmacKey] = {config.active_hmac_key.key_id: config.active_hmac_key}
        self._active_key_id = config.active_hmac_key.key_id
        self._counters: dict[int, int] = {}
        self._lock = threading.Lock()

    # -- introspection -----------------------------------------------------

    @property
    def coprocessor_id(self) -> int:
        return self.config.coprocessor_id

    @property
    def freshness_mode(self) -> bool:
        return self.config.freshness_mode

    @property
    def master_public(self) -> bytes:
        return self._master.public

    @property
    def active_key_id(self) -> int:
        return self._active_key_id

    def counter_table(self) -> dict[int, int]:
        with self._lock:
            return dict(self._counters)

    def retained_objects(self) -> int:
        """Count of per-instance objects held between requests."""
        with self._lock:
            return len(self._hmac_keys) + len(self.config.tech_signing_keys) + len(self._counters)

    def caps(self) -> Capabilities:
        return Capabilities(freshness_mode=self.freshness_mode)

    # -- sealed-state handling ---------------------------------------------

    def _open(self, sealed) -> VseState:
        sealed = _as_sealed(sealed)
        key = self._hmac_keys.get(sealed.key_id)
        if key is None:
            raise AttestError(Status.BAD_HMAC, f"unknown HMAC key id {sealed.key_id:#010x}")
        if not crypto.hmac_verify(key, sealed.signed_bytes(), sealed.tag):
            raise AttestError(Status.BAD_HMAC, "sealed state tag mismatch")
        return decode_state(sealed.plaintext)

    def _seal(self, state: VseState) -> SealedVseState:
        return seal(self._hmac_keys[self._active_key_id], state)

    def _check_counter(self, state: VseState) -> None:
        if not self.freshness_mode:
            return
        with self._lock:
            expected = self._counters.setdefault(state.vse_id, state.counter)
        if expected != state.counter:
            raise AttestError(
                Status.COUNTER_MISMATCH,
                f"vse {state.vse_id:#x}: presented {state.counter}, expected {expected}",
            )

    # -- commands -----------------------------------------------------------

    def create_vse(self, credential: bytes) -> CreationReceipt:
        tech_class = self.config.credential_registry.get(crypto.sha256(bytes(credential)))
        if not credential or tech_class is None:
            raise AttestError(Status.AUTH_FAILED, "unknown credential")
        tech_key = self.config.tech_signing_keys[tech_class]
        seed = crypto.random_bytes(32, self.rng)
        while seed == bytes(32):
            seed = crypto.random_bytes(32, self.rng)
        vse_id = int.from_bytes(crypto.random_bytes(8, self.rng), "big")
        flags = FLAG_FRESHNESS if self.freshness_mode else 0
        pcrs = zero_bank()
        rinit = None
        if self.config.random_init_mode:
            rinit = crypto.random_bytes(32, self.rng)
            pcrs = extend_bank(pcrs, 0, rinit)
            flags |= FLAG_RANDOM_INIT
        state = VseState(seed, vse_id, tech_class, flags, 0, pcrs)
        if self.freshness_mode:
            with self._lock:
                self._counters[vse_id] = 0
        ek = issue(
            self.config.identity_key, CertKind.COPROCESSOR, CertKind.EK,
            subject_public_key=tech_key.public, seed=seed, tech_class=tech_class,
            random_init_value=rinit, coprocessor_id=self.coprocessor_id,
        )
        return CreationReceipt(
            self._seal(state), ek, rinit,
            self.config.identity_certificate, self.config.root_certificate,
        )

    def pcr_extend(self, sealed, index: int, measurement: bytes) -> SealedVseState:
        state = self._open(sealed)
        pcrs = extend_bank(state.pcrs, index, measurement)
        counter = state.counter + 1 if state.freshness else state.counter
        if self.freshness_mode:
            with self._lock:
                expected = self._counters.setdefault(state.vse_id, state.counter)
                if expected != state.counter:
                    raise AttestError(
                        Status.COUNTER_MISMATCH,
                        f"vse {state.vse_id:#x}: presented {state.counter}, expected {expected}",
                    )
                self._counters[state.vse_id] = counter
        return self._seal(state.with_pcrs(pcrs, counter))

    def pcr_read(self, sealed, selection: int) -> list[tuple[int, bytes]]:
        state = self._open(sealed)
        indices = selected_indices(selection)
        self._check_counter(state)
        return [(i, state.pcrs[i]) for i in indices]

    def _ak_signer(self, state: VseState, ak: WrappedAttestationKey) -> SigningKeyPair:
        try:
            private = self._master.unwrap(ak.wrapped, aad=state.seed)
            signer = SigningKeyPair.from_private(private)
        except AttestError:
            raise AttestError(Status.KEY_NOT_FOUND, "attestation key not usable here") from None
        if signer.public != ak.public:
            raise AttestError(Status.KEY_NOT_FOUND, "AK certificate does not match key")
        return signer

    def quote(
        self, sealed, selection: int, nonce: bytes, ak: WrappedAttestationKey | None = None
    ) -> Quote:
        state = self._open(sealed)
        if len(nonce) != 32:
            raise CodecError(detail="nonce must be 32 bytes")
        digest = selection_digest(state.pcrs, selection)
        self._check_counter(state)
        if ak is not None:
            signer = self._ak_signer(state, ak)
        else:
            signer = self.config.tech_signing_keys.get(state.tech_class)
            if signer is None:
                raise AttestError(Status.KEY_NOT_FOUND, f"no key for tech class {state.tech_class}")
        q = Quote(state.tech_class, state.seed, selection, state.counter,
                  bytes(nonce), digest, signer.key_id)
        return replace(q, signature=signer.sign(q.signed_bytes()))

    def create_key(self, sealed) -> WrappedAttestationKey:
        state = self._open(sealed)
        self._check_counter(state)
        ak = SigningKeyPair.generate(self.rng)
        wrapped = self._master.wrap(ak.private, aad=state.seed, rng=self.rng)
        cert = issue(
            self.config.identity_key, CertKind.COPROCESSOR, CertKind.AK,
            subject_public_key=ak.public, seed=state.seed, tech_class=state.tech_class,
            coprocessor_id=self.coprocessor_id,
        )
        return WrappedAttestationKey(wrapped, cert)

    # -- HMAC key pool (admin) ---------------------------------------------

    def gen_hmac_key(self) -> int:
        key = HmacKey.generate(self.rng)
        with self._lock:
            self._hmac_keys[key.key_id] = key
            self._active_key_id = key.key_id
        log.info("coprocessor %d generated HMAC key %#010x", self.coprocessor_id, key.key_id)
        return key.key_id

    def export_hmac_key(self, peer_master_public: bytes, key_id: int | None = None) -> WrappedKey:
        key = self._hmac_keys.get(self._active_key_id if key_id is None else key_id)
        if key is None:
            raise AttestError(Status.KEY_NOT_FOUND, "no such HMAC key")
        payload = struct.pack(">I", key.key_id) + key.secret
        return crypto.wrap_for_peer(peer_master_public, payload, aad=b"hmac-key", rng=self.rng)

    def import_hmac_key(self, wrapped: WrappedKey) -> int:
        payload = self._master.unwrap(wrapped, aad=b"hmac-key")
        if len(payload) != 4 + crypto.KEY_SIZE:
            raise AttestError(Status.AUTH_FAILED, "wrapped HMAC key has wrong size")
        key = HmacKey(int.from_bytes(payload[:4], "big"), payload[4:])
        with self._lock:
            self._hmac_keys[key.key_id] = key
            self._active_key_id = key.key_id
        log.info("coprocessor %d imported HMAC key %#010x", self.coprocessor_id, key.key_id)
        return key.key_id

    # -- counter persistence ------------------------------------------------

    def save_counters(self, path) -> None:
        """Snapshot the counter table: 16 bytes per entry (vse_id, counter)."""
        with self._lock:
            items = sorted(self._counters.items())
        with open(path, "wb") as fh:
            for vse_id, counter in items:
                fh.write(struct.pack(">QQ", vse_id, counter))

    def load_counters(self, path) -> None:
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) % 16:
            raise CodecError(detail="counter snapshot length not a multiple of 16")
        with self._lock:
            for vse_id, counter in struct.iter_unpack(">QQ", data):
                self._counters[vse_id] = counter

"""Tenant-side quote verification.

Every check runs even after an earlier one fails, so a verdict shows exactly
which properties broke. Check order: chain, signature, nonce, tech_class,
seed, digest.
"""

from __future__ import annotations

import hmac
import json
from dataclasses import dataclass, field
from typing import Iterable

from . import crypto
from .agent import RANDOM_INIT_LABEL, BootLayer, EventLog
from .coprocessor import Quote
from .errors import AttestError, BrokenChain, CodecError
from .pki import Certificate, ChainFacts, verify_chain
from .state import extend_bank, selection_digest, zero_bank

CHECKS = ("chain", "signature", "nonce", "tech_class", "seed", "digest")


@dataclass
class AttestationPolicy:
    trusted_root_public: bytes
    selection: int
    accepted_tech_classes: frozenset = frozenset()
    expected_seed: bytes | None = None
    golden_digest: bytes | None = None


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Verdict:
    checks: list[Check] = field(default_factory=list)
    seed: bytes | None = None

    @property
    def accepted(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "seed": self.seed.hex() if self.seed else None,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def initial_bank(random_init: bytes | None = None) -> tuple[bytes, ...]:
    bank = zero_bank()
    if random_init is not None:
        bank = extend_bank(bank, 0, random_init)
    return bank


def replay_log(random_init: bytes | None, log: EventLog, selection: int) -> bytes:
    """Digest of ``selection`` after replaying ``log`` over the initial bank.

    When the VSE was random-initialized, a leading log entry that records
    exactly that value is the initial state itself and is not applied twice.
    """
    entries = list(log)
    if (
        random_init is not None
        and entries
        and entries[0].description == RANDOM_INIT_LABEL
        and entries[0].pcr_index == 0
        and entries[0].digest == random_init
    ):
        entries = entries[1:]
    bank = EventLog(entries).replay(initial_bank(random_init))
    return selection_digest(bank, selection)


def compute_golden(layers: Iterable[BootLayer], selection: int, random_init: bytes | None = None) -> bytes:
    bank = initial_bank(random_init)
    for layer in layers:
        bank = extend_bank(bank, layer.pcr_index, layer.measurement)
    return selection_digest(bank, selection)


def _decode_quote(quote) -> Quote:
    return quote if isinstance(quote, Quote) else Quote.decode(quote)


def verify_quote(
    quote,
    expected_nonce: bytes,
    chain,
    policy: AttestationPolicy,
    log: EventLog | None = None,
    ek_certificate=None,
) -> Verdict:
    """Check ``quote`` against ``chain = [root, coprocessor, leaf]``.

    ``leaf`` is the EK certificate (tech-class signing key) or an AK
    certificate. ``ek_certificate`` supplies the VSE identity and random-init
    value when the leaf is an AK; it must chain to the same root.
    """
    verdict = Verdict()
    add = lambda name, ok, detail="": verdict.checks.append(Check(name, bool(ok), detail))  # noqa: E731

    facts: ChainFacts | None = None
    ek: Certificate | None = None
    try:
        if len(chain) != 3:
            raise BrokenChain(0, f"chain must have 3 certificates, got {len(chain)}")
        facts = verify_chain(chain[2], chain[:2], policy.trusted_root_public)
        if ek_certificate is not None:
            ek = verify_chain(ek_certificate, chain[:2], policy.trusted_root_public).leaf
        else:
            ek = facts.leaf
        add("chain", True)
    except BrokenChain as exc:
        add("chain", False, exc.detail)

    try:
        q = _decode_quote(quote)
    except CodecError as exc:
        for name in CHECKS[1:]:
            add(name, False, f"undecodable quote: {exc.detail}")
        return verdict
    verdict.seed = q.seed

    if facts is None:
        add("signature", False, "no trusted signer key")
    elif q.signer_key_id != crypto.key_id_for(facts.signer_public):
        add("signature", False, "signer key id does not match certified key")
    else:
        try:
            ok = crypto.verify(facts.signer_public, q.signed_bytes(), q.signature)
        except CodecError:
            ok = False
        add("signature", ok, "" if ok else "signature does not verify")

    nonce_ok = len(q.nonce) == len(expected_nonce) and hmac.compare_digest(q.nonce, expected_nonce)
    add("nonce", nonce_ok, "" if nonce_ok else "nonce differs from challenge")

    problems = []
    if q.tech_class not in policy.accepted_tech_classes:
        problems.append(f"tech class {q.tech_class} not accepted")
    for cert in {id(c): c for c in (facts.leaf if facts else None, ek) if c is not None}.values():
        if cert.tech_class != q.tech_class:
            problems.append(f"{cert.kind.name} certifies tech class {cert.tech_class}")
    add("tech_class", not problems, "; ".join(problems))

    problems = []
    for label, want in (
        ("leaf", facts.seed if facts else None),
        ("EK", ek.seed if ek else None),
        ("expected", policy.expected_seed),
    ):
        if want is not None and want != q.seed:
            problems.append(f"seed differs from {label} seed")
    if facts is None and policy.expected_seed is None:
        problems.append("no trusted seed to compare")
    add("seed", not problems, "; ".join(problems))

    add(*_digest_check(q, policy, log, ek.random_init_value if ek else None))
    return verdict


def _digest_check(q: Quote, policy: AttestationPolicy, log, random_init) -> tuple[str, bool, str]:
    if q.selection != policy.selection:
        return "digest", False, f"quote selects {q.selection:#08x}, policy {policy.selection:#08x}"
    if policy.golden_digest is None and log is None:
        return "digest", False, "no golden digest or event log configured"
    if policy.golden_digest is not None and q.digest != policy.golden_digest:
        return "digest", False, "digest differs from golden digest"
    if log is not None:
        try:
            replayed = replay_log(random_init, log, policy.selection)
        except AttestError as exc:
            return "digest", False, f"event log replay failed: {exc}"
        if replayed != q.digest:
            return "digest", False, "digest differs from event log replay"
    return "digest", True, ""
